"""One-step generation on the Swiss roll: distilling a 100-step solver.

The full desk-scale pipeline: fit a denoiser teacher on Swiss-roll samples,
integrate 2048 Euler trajectories of the induced probability flow, regress
the two-time characteristic generator onto those trajectories (with the
semigroup penalty), and compare the W2 of one-step samples against the
100-step Euler baseline.  Refined sampling with a handful of chained
generator calls is also scored, giving the W2-vs-NFE curve.

Writes demos/out/w2_vs_nfe.csv plus the sample sets as CSVs.
"""

import os
import time

import numpy as np

from charflow.cgen import CgTrainConfig, multi_step, one_step, train_cg
from charflow.metrics import w2_exact
from charflow.net import NetSpec
from charflow.sampler import TimeGrid, push_samples
from charflow.schedule import Schedule
from charflow.target import sample_target, save_points, swiss_roll
from charflow.velocity import (TrainConfig, estimate_sigma_data, make_denoiser, train,
                               velocity_from_denoiser)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

sch = Schedule("follmer")
T, K = 0.99, 100
start = time.time()

spec = swiss_roll()
data = sample_target(spec, 4096, seed=100)
holdout = sample_target(spec, 2048, seed=101)
print(f"== data: {len(data)} training / {len(holdout)} holdout Swiss-roll points")

print("== teacher: denoiser matching (SiLU [64,64], 4000 steps)")
teacher_cfg = TrainConfig(schedule=sch, net_spec=NetSpec(3, (64, 64), 2, activation="silu"),
                          stop_time=T, iterations=4000, batch_size=256, lr=1e-3, seed=102,
                          loss="denoiser")
teacher_net, _ = train(teacher_cfg, data)
sigma_data = estimate_sigma_data(data)
denoiser = make_denoiser(teacher_net, sch, sigma_data)
field = lambda t, X: velocity_from_denoiser(denoiser, sch, t, X)

print(f"== trajectories: 2048 particles x {K} Euler steps")
corpus = push_samples("euler", field, 2048, 2, TimeGrid(T, K), seed=103)
euler_samples = corpus.endpoints()

print("== characteristic generator: trajectory regression + semigroup penalty")
cg_cfg = CgTrainConfig(mode="regression", schedule=sch, net_spec=NetSpec(4, (64, 64), 2, activation="silu"),
                       stop_time=T, iterations=3000, batch_size=128, lr=1e-3,
                       lambda_semigroup=0.1, pairs_per_particle=8, triples_per_particle=4,
                       seed=104, sigma_data=sigma_data)
student, cg_losses = train_cg(cg_cfg, corpus=corpus)
print(f"  final regression loss {np.mean(cg_losses[-100:]):.5f}")

print("== sampling and evaluation (exact W2 on 2048 points per side)")
results = [("euler", K, w2_exact(euler_samples, holdout))]
one = one_step(student, 2048, T, seed=105)
results.append(("cg", 1, w2_exact(one, holdout)))
for nfe in (2, 3, 5):
    pts = multi_step(student, np.linspace(0.0, T, nfe + 1), 2048, seed=105)
    results.append(("cg", nfe, w2_exact(pts, holdout)))
for method, nfe, w2 in results:
    print(f"  {method:6s} NFE={nfe:3d}  W2 to holdout = {w2:.4f}")

save_points(os.path.join(OUT, "swiss_roll_holdout.csv"), holdout, "charflow demo")
save_points(os.path.join(OUT, "swiss_roll_euler100.csv"), euler_samples, "charflow demo")
save_points(os.path.join(OUT, "swiss_roll_one_step.csv"), one, "charflow demo")

path = os.path.join(OUT, "w2_vs_nfe.csv")
with open(path, "w") as fh:
    fh.write("# charflow demo: W2 to holdout vs sampler NFE\n")
    fh.write("method,nfe,w2\n")
    for method, nfe, w2 in results:
        fh.write(f"{method},{nfe},{w2!r}\n")
print(f"\nwrote {path} ({time.time() - start:.0f}s total)")
