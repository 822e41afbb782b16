"""Lorentz quasi-norms of simple functions: the level sum, the power law, and the constants in Hoelder.

    python3 demos/lorentz_laws.py
"""

import math

import numpy as np

from moserlab import lorentz as lz

rng = np.random.default_rng(3)
f = rng.choice([0.0, 0.5, 1.0, 2.0], 40)
mu = rng.uniform(0.2, 2.0, 40)

print("a four-level function on 40 weighted nodes")
for r, r1 in ((2, 2), (2, 1), (2, 4), (2, math.inf)):
    print(f"  ||f||_({r},{r1}) = {lz.lorentz_norm(f, mu, r, r1):.10f}")
print(f"  plain L^2 for comparison: {math.fsum(mu * f**2) ** 0.5:.10f}")

chk = lz.check_power_law(f, mu, 1.5, 2.0, 3.0)
print(f"\npower law at sigma = 1.5: {chk.lhs:.15f} vs {chk.rhs:.15f}")

# interpolation with factor 1 holds when all second indices agree, as in the Moser step ...
a, b, s = 2.0, 6.0, 0.4
r = 1 / (s / a + (1 - s) / b)
chk = lz.check_lorentz_hoelder(f, None, mu, (a, 2, b, 2), r, 2, sigma=s)
print(f"\nsecond indices all 2: lhs/rhs = {chk.lhs / chk.rhs:.4f}, factor {chk.factor:.4f}")

# ... but not for this layer-cake normalization in general
g = np.array([2.425, 2.778, 0.872, 1.663, 1.384, 2.8])
nu = np.array([0.531, 2.921, 2.681, 2.485, 1.492, 0.774])
a, a1, b, b1, s = 0.804, 5.108, 5.99, 0.713, 0.719
r, r1 = 1 / (s / a + (1 - s) / b), 1 / (s / a1 + (1 - s) / b1)
chk = lz.check_lorentz_hoelder(g, None, nu, (a, a1, b, b1), r, r1, sigma=s)
print(f"mixed second indices: lhs/rhs = {chk.lhs / chk.rhs:.4f} > 1, "
      f"derived factor {chk.factor:.4f} covers it: {chk.holds_with_factor}")
