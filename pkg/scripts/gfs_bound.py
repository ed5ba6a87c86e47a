"""Sharpness at the gradient-flow limit from a zero-top start, against the init-scale bound."""
import itertools

from eoslab.dynamics import gf_limit_point
from eoslab.hessian import minima_sharpness_closed_form
from eoslab.spectral import gfs_sharpness_bound

for L, s, alpha in itertools.product((2, 3, 4), (1.0, 5.0, 10.0), (0.01, 0.1, 0.3)):
    limit = gf_limit_point([alpha] * (L - 1) + [0.0], s)
    sharp = minima_sharpness_closed_form(limit, s)
    bound = gfs_sharpness_bound(alpha, L, s)
    print(f"L={L} s*={s:<4} alpha={alpha:<4} sharpness {sharp:12.6f}  bound {bound:12.6f}  "
          f"{'ok' if sharp <= bound * (1 + 1e-12) else 'VIOLATED'}")
