"""A short Youla training run, its nominal trajectory and a decay/tail report.

Ten epochs take about 20 s on one core.  Pass an epoch count to go longer:

    python demos/short_training.py 50
"""
import sys

import numpy as np

from les_youla import TrainConfig, train
from les_youla.training import evaluate
from les_youla.verify import decay_tail_report

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = TrainConfig(epochs=epochs, seed=0)


def show(epoch, curve):
    if epoch == 1 or epoch % 5 == 0:
        print(f"epoch {epoch:3d}  mean cost {curve.mean[-1]:9.4f}")


res = train(cfg, progress=show)
print(f"cost ratio last/first: {res.curve.mean[-1] / res.curve.mean[0]:.3f}")
print("structural Hurwitz on final parameters:", res.final_hurwitz)

ev = evaluate(res.experiment, res.params)
print(f"nominal rollout: J_T = {ev['J_T']:.3f}, obstacle penetrations = {ev['penetrations']}")
for k in range(0, len(ev["x"]), 50):
    p, _, th, _ = ev["x"][k]
    tx, ty = ev["tip"][k]
    print(f"  t={k * cfg.h:4.1f}  p={p:+.3f}  theta={th:+.3f}  tip=({tx:+.3f}, {ty:.3f})")

x0 = 0.05 * np.asarray(cfg.eval_x0) / np.linalg.norm(cfg.eval_x0)
rep = decay_tail_report(res.experiment, res.params, x0, T=10.0)
print(f"decay from |x0| = 0.05: lambda = {rep['decay_x']['lambda']:.3f}, "
      f"|x(10)| = {rep['final_norm']:.2e}, tail check passed = {rep['tail']['passed']}")
