"""Off-policy actor-critic engine built around composable Gaussian policies.

The package trains K simple diagonal-Gaussian policies and a combined policy
that blends them per action dimension with state-dependent weights, all from
one shared replay stream.  Everything runs on numpy with a small tape-based
reverse-mode gradient engine; no external ML framework is involved.
"""

__version__ = "0.1.0"
