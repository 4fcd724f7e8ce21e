"""How much privacy does a training run spend?

Walks through the accountant: one noisy step, composition over many steps,
and the inverse question of how much noise a target epsilon needs.

    python demos/accountant_tour.py
"""

from dpvi import accountant as acc

N, B, delta = 60_000, 128, 1 / 60_000
q = B / N
T = 20 * -(-N // B)  # twenty passes over the data

# a single step of the subsampled Gaussian mechanism barely leaks anything
one = acc.pld_subsampled_gaussian(sigma=1.5, q=q)
print(f"one step:        eps = {acc.get_epsilon(one, delta):.5f}")

# composing T steps is a T-fold convolution of the loss distribution
res = acc.epsilon_details(1.5, q, T, delta)
print(f"{T} steps:      eps = {res.epsilon:.4f}  (grid points {res.grid_points})")
for direction, e in res.directions.items():
    print(f"    neighbour order {direction!r}: {e:.4f}")

# and the other way round: the noise needed for a budget
for target in (0.5, 1.0, 2.0):
    sigma = acc.approximate_sigma(target, delta, q, T)
    print(f"eps <= {target}: sigma = {sigma:.3f}")
