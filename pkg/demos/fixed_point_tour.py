"""Fixed-point formats grow with every operation; this walks through a few."""
from fractions import Fraction

from quantrt.fxp import FixedP, oct_decode_float, oct_encode
from quantrt.isect import precision_requirements

a = FixedP.from_float(3.25, 4, 4)
b = FixedP.from_float(-1.5, 2, 8)
print("a =", float(a), f"({a.R}.{a.Q})")
print("b =", float(b), f"({b.R}.{b.Q})")

for name, r in [("a+b", a + b), ("a-b", a - b), ("a*b", a * b), ("a/b", a / b)]:
    print(f"{name:4} = {float(r):10.6f}  format {r.R}.{r.Q}  exact {r.as_fraction()}")

# division truncates toward zero; floor/ceil are there when a bound must be safe
third = FixedP.from_int(1, 2).div(FixedP.from_int(3, 2))
print("1/3 trunc:", third.as_fraction(), "floor:", FixedP.from_int(-1, 2).div(FixedP.from_int(3, 2), "floor").as_fraction())
print("true 1/3 - truncated:", Fraction(1, 3) - third.as_fraction())

# how many bits the triangle test needs for a 16.8 origin and 1.10 direction
req = precision_requirements(16, 8, 1, 10, 16, 8)
print("stage formats:", [(req.R1, req.Q1), (req.R2, req.Q2), (req.R3, req.Q3), (req.R4, req.Q4)])
print("widest intermediate:", req.total_bits() + 1, "bits with sign")

# unit directions fit in 32 bits
d = (0.3, -0.8, 0.52)
code = oct_encode(d)
print(f"direction {d} -> 0x{code:08x} -> {oct_decode_float(code).round(5)}")
