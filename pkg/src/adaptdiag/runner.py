"""End-to-end runs: diagnostics for every tolerance, then JSON/CSV/manifest files.

The first tolerance in ``eps`` is the primary one: its report drives the
verdicts and ``adapfail.csv``.  Files are written only after every
computation succeeded, into a staging directory that is moved into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig, _plain
from .diagnostics import DiagnosticsReport, Thresholds, diagnose
from .scenarios import build_scenario

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ReportFiles:
    paths: tuple
    digests: dict

    def verify(self) -> bool:
        return all(sha256_file(Path(p)) == self.digests[Path(p).name] for p in self.paths)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x) -> str:
    # repr round-trips floats exactly
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def diminishing_csv(rep: DiagnosticsReport) -> str:
    d = rep.diminishing
    return _csv(["n", "D_median", "D_q95"], ([int(n), _fmt(a), _fmt(b)] for n, a, b in zip(d.n, d.median, d.q95)))


def containment_csv(reports: list[DiagnosticsReport]) -> str:
    rows = []
    for rep in reports:
        t = rep.containment
        for i, n in enumerate(t.n_grid):
            for j, M in enumerate(t.M_grid):
                rows.append([n, M, _fmt(rep.eps), _fmt(t.probs[i, j]), _fmt(t.censored[i])])
    return _csv(["n", "M", "eps", "tail_prob", "censored_frac"], rows)


def adapfail_csv(rep: DiagnosticsReport) -> str:
    a = rep.adapfail
    return _csv(["M", "delta"], ([M, _fmt(d)] for M, d in zip(a.M_grid, a.delta)))


def _json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def compute(cfg: RunConfig) -> list[DiagnosticsReport]:
    scenario = build_scenario(cfg.scenario, cfg.overrides)
    thresholds = Thresholds(delta_star=cfg.delta_star, eta_star=cfg.eta_star)
    prov = {"config_hash": cfg.digest(), "seed": cfg.seed}
    reports = []
    for eps in cfg.eps:
        log.info("diagnosing %s at eps=%s", cfg.scenario, eps)
        reports.append(diagnose(scenario, eps, cfg.n_grid, cfg.M_grid, cfg.cap, cfg.R, cfg.seed, cfg.n_burn,
                                thresholds, cfg.workers, prov))
    return reports


def render(cfg: RunConfig, reports: list[DiagnosticsReport]) -> dict[str, str]:
    files: dict[str, str] = {}
    primary = reports[0]
    if "json" in cfg.formats:
        files["report.json"] = _json({
            "format_version": FORMAT_VERSION,
            "scenario": cfg.scenario,
            "primary_eps": primary.eps,
            "verdicts": primary.verdicts,
            "reports": [r.to_dict() for r in reports],
        })
    if "csv" in cfg.formats:
        files["diminishing.csv"] = diminishing_csv(primary)
        files["containment.csv"] = containment_csv(reports)
        files["adapfail.csv"] = adapfail_csv(primary)
    return files


def run(cfg: RunConfig) -> ReportFiles:
    """Compute every diagnostic and write the report files into ``cfg.out_dir``."""
    files = render(cfg, compute(cfg))
    digests = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()}
    files["manifest.json"] = _json({
        "format_version": FORMAT_VERSION,
        "config": cfg.scientific(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "files": digests,
    })

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    written = []
    try:
        for name, text in files.items():
            (staging / name).write_text(text, encoding="utf-8")
        for name in files:
            target = out / name
            (staging / name).replace(target)
            written.append(target)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return ReportFiles(tuple(str(p) for p in written), {p.name: sha256_file(p) for p in written})
