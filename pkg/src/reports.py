"""Run artifacts: CSV curves, JSON summaries, Markdown report, manifest, coefficient dumps.
运行产物：CSV 曲线、JSON 摘要、Markdown 报告、清单与系数转储。
"""

import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .evolution import PicardReport, TimeGrid, Trajectory
from .particles import EnsembleStats, MeanFieldReport, ParticleEnsemble
from .spectral import DomainSpec
from .verify import CheckResult

DUMP_MAGIC = b"KFPT"
DUMP_VERSION = 1
DUMP_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("d", "<u4"),
    ("Nx", "<u4"),
    ("Kv", "<u4"),
    ("Nt", "<u4"),
    ("L", "<f8"),
    ("T", "<f8"),
])
MANIFEST_NAME = "manifest.json"
COMPARE_SE_LIMIT = 3.0
RATIO_NOTE = "convergence ratios need three or more runs"

logger = logging.getLogger(__name__)


class IncompatibleRunsError(ValueError):
    """Runs that cannot be compared (different domain or mode)."""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def read_csv(path: Path) -> Dict[str, np.ndarray]:
    """Numeric columns of a CSV written by write_csv."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader]
    columns = {}
    for i, name in enumerate(header):
        try:
            columns[name] = np.array([float(row[i]) for row in rows])
        except ValueError:
            continue
    return columns


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_dump(path: Path, trajectory: Trajectory) -> Path:
    """Little-endian dump: header (magic, version, d, Nx, Kv, Nt, L, T) then complex128 states."""
    domain, grid = trajectory.domain, trajectory.grid
    header = np.array(
        [(DUMP_MAGIC, DUMP_VERSION, domain.d, domain.Nx, domain.Kv, grid.Nt, domain.L, grid.T)],
        dtype=DUMP_HEADER,
    )
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(trajectory.states, dtype="<c16").tobytes())
    return path


def read_dump(path: Path) -> Trajectory:
    """Inverse of write_dump.

    Raises:
        ValueError: Bad magic, unknown version or truncated payload (格式错误)
    """
    raw = Path(path).read_bytes()
    if len(raw) < DUMP_HEADER.itemsize:
        raise ValueError(f"{path}: file too short for a coefficient dump")
    header = np.frombuffer(raw[:DUMP_HEADER.itemsize], dtype=DUMP_HEADER)[0]
    if bytes(header["magic"]) != DUMP_MAGIC:
        raise ValueError(f"{path}: not a coefficient dump")
    if int(header["version"]) != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported dump version {int(header['version'])}")
    domain = DomainSpec(d=int(header["d"]), L=float(header["L"]), Nx=int(header["Nx"]), Kv=int(header["Kv"]))
    grid = TimeGrid(T=float(header["T"]), Nt=int(header["Nt"]))
    states = np.frombuffer(raw[DUMP_HEADER.itemsize:], dtype="<c16")
    expected = (grid.Nt + 1) * int(np.prod(domain.shape))
    if states.size != expected:
        raise ValueError(f"{path}: expected {expected} coefficients, found {states.size}")
    return Trajectory(states.reshape((grid.Nt + 1,) + domain.shape), domain, grid)


class RunReporter:
    """Writes the artifacts of one run and records their checksums.
    写出单次运行的产物并记录校验和。
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: List[str] = []

    def _track(self, path: Path) -> Path:
        if path.name not in self.artifacts:
            self.artifacts.append(path.name)
        return path

    def write_trajectory(self, trajectory: Trajectory, name: str = "trajectory.csv") -> Path:
        """Columns t, normY, normVv, mass_mode_re, momentum_re."""
        rows = zip(
            trajectory.grid.times(),
            trajectory.normY_history,
            trajectory.normVv_history,
            trajectory.mass_mode.real,
            trajectory.momentum.real,
        )
        return self._track(write_csv(self.out_dir / name,
                                     ["t", "normY", "normVv", "mass_mode_re", "momentum_re"], rows))

    def write_control(self, values: np.ndarray, grid: TimeGrid, name: str = "control.csv") -> Path:
        return self._track(write_csv(self.out_dir / name, ["t_cell", "u"], zip(grid.cell_starts(), values)))

    def write_optimizer_log(self, log: List[Dict[str, Any]], name: str = "optimizer_log.csv") -> Path:
        header = ["iter", "cost", "tracking", "penalty", "step_size", "stationarity"]
        rows = ([row[h] for h in header] for row in log)
        return self._track(write_csv(self.out_dir / name, header, rows))

    def write_picard(self, report: PicardReport, name: str = "picard.csv") -> Path:
        rates = [float("nan")] + list(report.rates)
        rows = ((i + 1, r, rates[i] if i < len(rates) else float("nan"))
                for i, r in enumerate(report.residuals))
        return self._track(write_csv(self.out_dir / name, ["iter", "residual", "rate"], rows))

    def write_snapshot(self, ens: ParticleEnsemble, name: str = "snapshot.csv") -> Path:
        d = ens.domain.d
        header = ["id"] + [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
        rows = ([i] + list(ens.x[i]) + list(ens.v[i]) for i in range(ens.m))
        return self._track(write_csv(self.out_dir / name, header, rows))

    def write_stats(self, runs: Sequence[Dict[int, EnsembleStats]], dt: float, name: str = "stats.csv") -> Path:
        """One row per (replicate, output time): mean velocity and covariance entries."""
        rows, header = [], None
        for rep, run in enumerate(runs):
            for step in sorted(run):
                s = run[step]
                d = s.mean_velocity.size
                if header is None:
                    header = (["replicate", "t"] + [f"mean_v{i + 1}" for i in range(d)]
                              + [f"cov_{i + 1}{j + 1}" for i in range(d) for j in range(d)])
                rows.append([rep, step * dt] + list(s.mean_velocity) + list(s.covariance.ravel()))
        return self._track(write_csv(self.out_dir / name, header or ["replicate", "t"], rows))

    def write_particle_density(self, runs: Sequence[Dict[int, EnsembleStats]], dt: float,
                               name: str = "particle_density.csv") -> Path:
        """Replicate-mean binned density and its standard error per node (flattened index)."""
        rows = []
        R = len(runs)
        for step in sorted(runs[0]):
            dens = np.stack([run[step].density.ravel() for run in runs])
            mean = dens.mean(axis=0)
            se = dens.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full_like(mean, np.nan)
            rows.extend((step * dt, n, mean[n], se[n]) for n in range(mean.size))
        return self._track(write_csv(self.out_dir / name, ["t", "node", "density", "density_se"], rows))

    def write_meanfield(self, report: MeanFieldReport, name: str = "meanfield.csv") -> Path:
        rows = [row.to_dict() for row in report.rows]
        header = list(rows[0]) if rows else ["t"]
        return self._track(write_csv(self.out_dir / name, header, ([r[h] for h in header] for r in rows)))

    def write_checks(self, checks: Sequence[CheckResult], name: str = "checks") -> List[Path]:
        """CSV plus a human-readable text summary."""
        header = ["name", "kind", "samples", "worst_ratio", "median_ratio", "tolerance",
                  "worst_lhs", "worst_rhs", "passed"]
        csv_path = write_csv(self.out_dir / f"{name}.csv", header,
                             ([getattr(c, h) for h in header] for c in checks))
        lines = []
        for c in checks:
            mark = "✓" if c.passed else "✗"
            lines.append(f"{mark} {c.name:<28} {c.kind:<10} n={c.samples:<5} "
                         f"worst={c.worst_ratio:.3e} tol={c.tolerance:.0e}")
        failed = sum(not c.passed for c in checks)
        lines.append("")
        lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
        txt_path = self.out_dir / f"{name}.txt"
        txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return [self._track(csv_path), self._track(txt_path)]

    def write_dump(self, trajectory: Trajectory, name: str = "trajectory.kfpt") -> Path:
        return self._track(write_dump(self.out_dir / name, trajectory))

    def write_json(self, data: Dict[str, Any], name: str) -> Path:
        path = self.out_dir / name
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        return self._track(path)

    def write_markdown(self, summary: Dict[str, Any], name: str = "report.md") -> Path:
        path = self.out_dir / name
        path.write_text(generate_markdown_report(summary), encoding="utf-8")
        return self._track(path)

    def write_manifest(self, config: Dict[str, Any], metadata: Dict[str, Any]) -> Path:
        """Config echo, metadata and sha256 of every artifact written so far."""
        manifest = {
            "config": config,
            **metadata,
            "artifacts": {name: sha256_file(self.out_dir / name) for name in self.artifacts},
        }
        path = self.out_dir / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=_json_default)
        return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def load_manifest(run_dir: Path) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise IncompatibleRunsError(f"no manifest in {run_dir}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def verify_manifest(run_dir: Path) -> List[str]:
    """Artifacts whose checksum no longer matches the manifest."""
    manifest = load_manifest(run_dir)
    bad = []
    for name, digest in manifest.get("artifacts", {}).items():
        path = Path(run_dir) / name
        if not path.is_file() or sha256_file(path) != digest:
            bad.append(name)
    return bad


def generate_markdown_report(summary: Dict[str, Any]) -> str:
    """Markdown summary of a run.
    生成 Markdown 格式的运行摘要。

    Args:
        summary: Dict with "mode", "metadata" and mode-specific sections (运行摘要)
    """
    meta = summary.get("metadata", {})
    lines = [f"# Kinetic Fokker-Planck Run Report ({summary.get('mode', 'N/A')})", ""]
    lines.append(f"**Started:** {meta.get('started', 'N/A')}")
    lines.append(f"**Seed:** {meta.get('seed', 'N/A')}")
    lines.append(f"**Wall Time:** {meta.get('wall_time_s', float('nan')):.2f} s")
    domain = meta.get("domain")
    if domain:
        lines.append(f"**Domain:** d={domain['d']}, L={domain['L']:.6g}, Nx={domain['Nx']}, Kv={domain['Kv']}")
    lines.append("")

    if "trajectory" in summary:
        t = summary["trajectory"]
        lines.append("## Trajectory")
        lines.append("")
        lines.append(f"- **||y0||_Y:** {t['norm_initial']:.6e}")
        lines.append(f"- **||y(T)||_Y:** {t['norm_final']:.6e}")
        lines.append(f"- **Triple norm:** {t['triple_norm']:.6e}")
        lines.append(f"- **Mass-mode drift:** {t['mass_drift']:.3e}")
        lines.append("")

    if "picard" in summary:
        p = summary["picard"]
        lines.append("## Picard Iteration")
        lines.append("")
        lines.append(f"- **Converged:** {p['converged']} after {p['iterates']} iterates")
        lines.append(f"- **Observed rate:** {p['observed_rate']:.3e}")
        feas = p.get("feasibility")
        if feas:
            lines.append(f"- **Certified regime ({feas['label']}):** {feas['certified']}")
        lines.append("")

    if "optimization" in summary:
        o = summary["optimization"]
        lines.append("## Optimization")
        lines.append("")
        lines.append(f"- **Iterations:** {o['iterations']} (converged={o['converged']}, stalled={o['stalled']})")
        lines.append(f"- **Initial cost:** {o['initial_cost']:.6e}")
        lines.append(f"- **Final cost:** {o['cost']['total']:.6e}")
        cert = o.get("certificate")
        if cert:
            lines.append(f"- **Uniqueness certificate:** {'holds' if cert['holds'] else 'violated'}")
        lines.append("")

    if "particles" in summary:
        p = summary["particles"]
        lines.append("## Mean-Field Comparison")
        lines.append("")
        lines.append(f"m={p['m']}, replicates={p['replicates']}")
        lines.append("")
        lines.append("| t | density rms | density se | ratio |")
        lines.append("|---|---|---|---|")
        for row in p["rows"]:
            lines.append(f"| {row['t']:.3f} | {row['density_rms']:.3e} | {row['density_se']:.3e} "
                         f"| {row['density_ratio']:.2f} |")
        lines.append("")
        for flag in p.get("flags", []):
            lines.append(f"- {flag}")
        lines.append("")

    if "checks" in summary:
        lines.append("## Verification")
        lines.append("")
        for c in summary["checks"]:
            mark = "✓" if c["passed"] else "✗"
            lines.append(f"- {mark} **{c['name']}**: worst {c['worst_ratio']:.3e} (tol {c['tolerance']:.0e}, "
                         f"n={c['samples']})")
        lines.append("")

    return "\n".join(lines)


def _diff_columns(a: Dict[str, np.ndarray], b: Dict[str, np.ndarray], key: str = "t") -> Dict[str, float]:
    """Max abs difference per shared column at the shared key values."""
    if key not in a or key not in b:
        return {}
    ta, tb = a[key], b[key]
    ia, ib = [], []
    for i, t in enumerate(ta):
        j = int(np.argmin(np.abs(tb - t)))
        if abs(tb[j] - t) <= 1e-9 * max(1.0, abs(t)):
            ia.append(i)
            ib.append(j)
    return {
        name: float(np.max(np.abs(a[name][ia] - b[name][ib]))) if ia else float("nan")
        for name in a if name in b and name != key
    }


def _compatible(ma: Dict[str, Any], mb: Dict[str, Any], a: Path, b: Path):
    if ma.get("domain") != mb.get("domain"):
        raise IncompatibleRunsError(f"domains differ: {a} has {ma.get('domain')}, {b} has {mb.get('domain')}")
    if ma.get("mode") != mb.get("mode"):
        raise IncompatibleRunsError(f"modes differ: {ma.get('mode')} vs {mb.get('mode')}")


def _density_z(a: Path, b: Path) -> Optional[Dict[str, float]]:
    """Root-mean-square z-score of binned particle densities across two runs."""
    pa, pb = a / "particle_density.csv", b / "particle_density.csv"
    if not (pa.is_file() and pb.is_file()):
        return None
    ca, cb = read_csv(pa), read_csv(pb)
    if ca["t"].shape != cb["t"].shape:
        raise IncompatibleRunsError("particle outputs have different times or grids")
    se = np.sqrt(ca["density_se"] ** 2 + cb["density_se"] ** 2)
    z = np.abs(ca["density"] - cb["density"]) / np.where(se > 0, se, np.inf)
    rms_z = float(np.sqrt(np.mean(z ** 2)))
    return {"rms_z": rms_z, "max_z": float(np.max(z)), "within": rms_z <= COMPARE_SE_LIMIT}


def compare_runs(run_dirs: Sequence[Path], tol: float = 0.0) -> Dict[str, Any]:
    """Diff norm histories and cost logs of two or more runs.
    比较多次运行的范数历史与代价日志。

    Consecutive runs are diffed pairwise. For a refinement chain of three or
    more runs, per-column convergence ratios diff(k-1,k)/diff(k,k+1) and the
    observed orders log2 of those ratios are reported. With exactly two runs
    the single per-column error is reported as pair_error instead.

    Raises:
        IncompatibleRunsError: Missing manifest or mismatched domain/mode (运行不兼容)
    """
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    dirs = [Path(p) for p in run_dirs]
    manifests = [load_manifest(p) for p in dirs]
    for i in range(1, len(dirs)):
        _compatible(manifests[0], manifests[i], dirs[0], dirs[i])

    pairs = []
    for i in range(len(dirs) - 1):
        a, b = dirs[i], dirs[i + 1]
        entry: Dict[str, Any] = {"a": str(a), "b": str(b)}
        for name, key in (("trajectory.csv", "t"), ("optimizer_log.csv", "iter"), ("control.csv", "t_cell")):
            if (a / name).is_file() and (b / name).is_file():
                entry[name] = _diff_columns(read_csv(a / name), read_csv(b / name), key)
        density = _density_z(a, b)
        if density is not None:
            entry["particle_density"] = density
        diffs = [v for name in ("trajectory.csv", "optimizer_log.csv", "control.csv")
                 for v in entry.get(name, {}).values() if not math.isnan(v)]
        entry["max_diff"] = max(diffs) if diffs else 0.0
        entry["within_tol"] = entry["max_diff"] <= tol
        pairs.append(entry)

    result: Dict[str, Any] = {"runs": [str(p) for p in dirs], "tol": tol, "pairs": pairs}
    if len(pairs) >= 2:
        ratios: Dict[str, List[float]] = {}
        for prev, nxt in zip(pairs, pairs[1:]):
            for col, d_prev in prev.get("trajectory.csv", {}).items():
                d_next = nxt.get("trajectory.csv", {}).get(col)
                if d_next is None:
                    continue
                ratios.setdefault(col, []).append(d_prev / d_next if d_next > 0 else float("inf"))
        result["convergence_ratio"] = ratios
        result["observed_order"] = {
            col: [math.log2(r) if 0 < r < float("inf") else float("nan") for r in rs]
            for col, rs in ratios.items()
        }
    else:
        result["pair_error"] = dict(pairs[0].get("trajectory.csv", {}))
        result["convergence_note"] = RATIO_NOTE
        logger.info("%s; reporting the single pair error of %s vs %s", RATIO_NOTE, dirs[0], dirs[1])
    return result
