"""Dataset files: CSV with '#' schema headers plus a key=value config."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
MODELS = ("planar2d", "stereo3d")

COLUMNS = {
    ("ground_truth", "planar2d"): ["t_sec", "px", "py", "theta"],
    ("ground_truth", "stereo3d"): ["t_sec", "px", "py", "pz", "qw", "qx", "qy", "qz"],
    ("tracks", "planar2d"): ["t_sec", "frame_idx", "feature_id", "z1", "z2"],
    ("tracks", "stereo3d"): ["t_sec", "frame_idx", "feature_id", "z1", "z2", "z3"],
    ("imu", "stereo3d"): ["t_sec", "wx", "wy", "wz", "ax", "ay", "az"],
    ("odometry", "planar2d"): ["t_sec", "v", "omega"],
    ("landmarks", "planar2d"): ["feature_id", "x", "y"],
    ("landmarks", "stereo3d"): ["feature_id", "x", "y", "z"],
    ("estimate", "planar2d"): ["t_sec", "px", "py", "theta"],
    ("estimate", "stereo3d"): ["t_sec", "px", "py", "pz", "qw", "qx", "qy", "qz"],
    ("drift", "planar2d"): ["distance_m", "drift_m"],
    ("drift", "stereo3d"): ["distance_m", "drift_m"],
}
FILES = {"ground_truth": "ground_truth.csv", "tracks": "tracks.csv", "imu": "imu.csv",
         "odometry": "odometry.csv", "landmarks": "landmarks.csv"}
CONFIG_FILE = "config.txt"


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


def fmt(x) -> str:
    """Shortest round-trip text for a float; integers stay integral."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class Dataset:
    model: str
    config: dict
    gt_t: np.ndarray
    gt: np.ndarray
    track_t: np.ndarray
    track_frame: np.ndarray
    track_fid: np.ndarray
    track_z: np.ndarray
    odometry: np.ndarray | None = None
    imu: np.ndarray | None = None
    landmarks: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return len(self.gt_t)

    def frames(self):
        """Measurement lists [(feature_id, z), ...] per frame index."""
        out = [[] for _ in range(self.n_frames)]
        for f, fid, z in zip(self.track_frame, self.track_fid, self.track_z):
            if not 0 <= f < self.n_frames:
                raise DataError(f"track references frame {f} outside 0..{self.n_frames - 1}")
            out[int(f)].append((int(fid), np.array(z, dtype=float)))
        return out

    def controls(self):
        """(v, omega) applied after each frame, planar datasets only."""
        if self.odometry is None:
            raise DataError("dataset has no odometry")
        return self.odometry[:, 1:3]

    def imu_between(self, t0, t1):
        """IMU rows with t0 <= t < t1."""
        t = self.imu[:, 0]
        return self.imu[(t >= t0 - 1e-12) & (t < t1 - 1e-12)]


# --- writing -------------------------------------------------------------------

def write_csv(path: Path, name: str, model: str, rows):
    cols = COLUMNS[(name, model)]
    lines = [f"# unislam {name} schema={SCHEMA_VERSION} model={model}", "# " + ",".join(cols)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_config(path: Path, config: dict):
    lines = [f"# unislam config schema={SCHEMA_VERSION}"]
    lines += [f"{k}={config[k]}" for k in sorted(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(ds: Dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / FILES["ground_truth"], "ground_truth", ds.model,
               ([t, *x] for t, x in zip(ds.gt_t, ds.gt)))
    write_csv(d / FILES["tracks"], "tracks", ds.model,
               ([t, int(f), int(i), *z] for t, f, i, z in
                zip(ds.track_t, ds.track_frame, ds.track_fid, ds.track_z)))
    if ds.odometry is not None:
        write_csv(d / FILES["odometry"], "odometry", ds.model, ds.odometry)
    if ds.imu is not None:
        write_csv(d / FILES["imu"], "imu", ds.model, ds.imu)
    if ds.landmarks is not None:
        write_csv(d / FILES["landmarks"], "landmarks", ds.model,
                   ([int(r[0]), *r[1:]] for r in ds.landmarks))
    write_config(d / CONFIG_FILE, {**ds.config, "model": ds.model})
    return d


# --- reading -------------------------------------------------------------------

def read_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise DataError(f"{path.name}:{n}: expected key=value, got {s!r}")
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_csv(path: Path, name: str, model: str, required=True, increasing=True):
    if not path.exists():
        if required:
            raise DataError(f"missing file {path}")
        return None
    cols = COLUMNS[(name, model)]
    rows = []
    header_seen = columns_seen = False
    last_t = None
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if body.startswith("unislam"):
                fields = dict(p.split("=", 1) for p in body.split()[2:] if "=" in p)
                if body.split()[1:2] != [name]:
                    raise DataError(f"{path.name}:{n}: header names {body.split()[1:2]}, expected {name}")
                if fields.get("schema") != str(SCHEMA_VERSION):
                    raise DataError(f"{path.name}:{n}: schema version {fields.get('schema')!r}, "
                                    f"expected {SCHEMA_VERSION}")
                if fields.get("model") != model:
                    raise DataError(f"{path.name}:{n}: model {fields.get('model')!r}, expected {model}")
                header_seen = True
            elif body.split(",") == cols:
                columns_seen = True
            else:
                raise DataError(f"{path.name}:{n}: unexpected header line {s!r}")
            continue
        if not (header_seen and columns_seen):
            raise DataError(f"{path.name}:{n}: data before the schema header")
        parts = s.split(",")
        if len(parts) != len(cols):
            raise DataError(f"{path.name}:{n}: expected {len(cols)} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DataError(f"{path.name}:{n}: non-numeric field in {s!r}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"{path.name}:{n}: non-finite value")
        if increasing:
            t = vals[0]
            if last_t is not None and not t > last_t:
                raise DataError(f"{path.name}:{n}: timestamp {t!r} is not after {last_t!r}")
            last_t = t
        rows.append(vals)
    if not header_seen:
        raise DataError(f"{path.name}: missing schema header")
    return np.array(rows, dtype=float).reshape(-1, len(cols))


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    config = read_config(d / CONFIG_FILE)
    model = config.get("model")
    if model not in MODELS:
        raise DataError(f"{CONFIG_FILE}: unknown model {model!r}")
    gt = read_csv(d / FILES["ground_truth"], "ground_truth", model)
    tracks = read_csv(d / FILES["tracks"], "tracks", model, increasing=False)
    # tracks are grouped by frame: time must not decrease
    if len(tracks) > 1 and np.any(np.diff(tracks[:, 0]) < 0):
        bad = int(np.argmax(np.diff(tracks[:, 0]) < 0)) + 2
        raise DataError(f"{FILES['tracks']}: timestamps decrease at data row {bad}")
    odo = read_csv(d / FILES["odometry"], "odometry", model, required=(model == "planar2d")) \
        if model == "planar2d" else None
    imu = read_csv(d / FILES["imu"], "imu", model) if model == "stereo3d" else None
    lms = read_csv(d / FILES["landmarks"], "landmarks", model, required=False, increasing=False)
    frame = tracks[:, 1].astype(int)
    if np.any(tracks[:, 1] != frame) or np.any(frame < 0) or np.any(frame >= len(gt)):
        raise DataError(f"{FILES['tracks']}: frame_idx must be an integer frame index below {len(gt)}")
    if odo is not None and len(odo) != len(gt):
        raise DataError(f"{FILES['odometry']}: {len(odo)} rows for {len(gt)} frames")
    cfg = {k: v for k, v in config.items() if k != "model"}
    return Dataset(model, cfg, gt[:, 0].copy(), gt[:, 1:].copy(), tracks[:, 0].copy(), frame,
                   tracks[:, 2].astype(int), tracks[:, 3:].copy(), odo, imu, lms)
