"""Survey a simulated room, then locate a device from MCS observations.

Uses the true MCS values in place of a classifier so it runs in seconds.
Run: python3 demos/localize.py
"""
from mcsloc.locmap import (RadioEnvironment, coarsen_index, draw_trial_conditions, locate, merge_tiles,
                           score_localization, simulate_environment)

env = RadioEnvironment(seed=5)
room = simulate_environment(env, 6, 9, 500)
print("mean MCS per tile")
for row in room.mean_grid():
    print("  " + " ".join(f"{v:5.2f}" for v in row))

merged = merge_tiles(room, 2)
print("merged grid", merged.shape)

_, mcs = draw_trial_conditions(env, 6, 9, 4 * 25)
truth, pred, coarse_pred = [], [], []
for r in range(6):
    for c in range(9):
        for trial in mcs[r, c].reshape(4, 25):
            pr, pc, _ = locate(room, trial.tolist())
            truth.append((r, c))
            pred.append((pr, pc))
            coarse_pred.append(locate(merged, trial.tolist())[:2])

fine = score_localization(truth, pred)
print(f"exact {fine.exact:.3f}  within one tile {fine.within_one:.3f}  chance {1 / 54:.3f}")
coarse_truth = [coarsen_index(r, c, 2) for r, c in truth]
print(f"2x2 tiles: coarsened predictions {score_localization(coarse_truth, [coarsen_index(*p, 2) for p in pred]).exact:.3f}",
      f"merged map {score_localization(coarse_truth, coarse_pred).exact:.3f}")
print("tiles never chosen:", 54 - len(set(pred)), "of 54")
