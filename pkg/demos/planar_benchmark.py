"""Every estimator on the default planar circle, against dead reckoning.

    python3 demos/planar_benchmark.py [seed]
"""

import sys

from unislam.estimators.schedule import EstimatorSchedule
from unislam.experiment import ExperimentConfig, run_experiment
from unislam.sim import SimConfig, gen_dataset

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 42
ds = gen_dataset(SimConfig(seed=seed))
print(f"seed {seed}: {ds.n_frames} frames, {len(ds.track_t)} landmark sightings\n")

lineup = [("ekf", {}), ("iekf", {}), ("swf", {"n": 5}), ("swf", {"n": 10}),
          ("keyframe", {}), ("msckf", {"n_max": 5}), ("imsckf", {"n_max": 5})]

dr = None
print(f"{'estimator':<12}{'RMSE [m]':>10}{'rot [deg]':>11}{'GN iters':>10}{'time [s]':>10}")
for kind, kw in lineup:
    sched = EstimatorSchedule.preset(kind, **kw)
    m = run_experiment(ExperimentConfig("<memory>", sched), dataset=ds).metrics
    dr = m["dead_reckoning"]
    print(f"{m['estimator']:<12}{m['translation_rmse_m']:>10.4f}{m['rotation_rmse_deg']:>11.3f}"
          f"{m['gn_iterations']:>10d}{m['runtime_s']:>10.2f}")
print(f"{'odometry':<12}{dr['translation_rmse_m']:>10.4f}{dr['rotation_rmse_deg']:>11.3f}")
