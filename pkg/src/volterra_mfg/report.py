"""Deterministic CSV/JSON writers and optional PNG figures."""

from __future__ import annotations

import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__


def fmt(x: Any) -> str:
    """17 significant digits for floats (round-trip safe); plain text otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    return x


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def run_metadata(config_sha256: str, seed: int | None, command: str) -> dict:
    """Timestamp comes from ``SOURCE_DATE_EPOCH`` only, so reruns stay byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = None
    if epoch is not None and epoch.strip().isdigit():
        stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return {"command": command, "config_sha256": config_sha256, "seed": seed,
            "timestamp": stamp, "version": __version__}


# -- figures ---------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({
        "figure.figsize": (5.0, 3.4),
        "figure.dpi": 120,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "font.size": 9,
        "legend.frameon": False,
        "svg.hashsalt": "volterra-mfg",
    })
    return plt


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_mean_path(path: Path, t, a_hat, phi_hat) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.plot(t, a_hat, label=r"$\hat a$ (consistent mean)")
    ax.plot(t, phi_hat, ls="--", label=r"$\hat\varphi$ (uncontrolled mean)")
    ax.set_xlabel("t")
    ax.legend()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_rates(path: Path, Ns, mf_error, gap, gap_se, mf_fit=None, gap_fit=None) -> Path:
    plt = _pyplot()
    Ns = np.asarray(Ns, dtype=float)
    fig, ax = plt.subplots()
    ax.loglog(Ns, mf_error, "o-", label=r"$E\int|x^N-\hat a|^2$")
    g = np.abs(np.asarray(gap, dtype=float))
    ax.errorbar(Ns, g, yerr=3 * np.asarray(gap_se, dtype=float), fmt="s-", capsize=3,
                label=r"|cost gap| $\pm$ 3 se")
    ref = Ns / Ns[0]
    if np.all(np.asarray(mf_error) > 0):
        ax.loglog(Ns, mf_error[0] / ref, "k:", lw=0.8, label="slope -1")
    if np.all(g > 0):
        ax.loglog(Ns, g[0] / np.sqrt(ref), "k--", lw=0.8, label="slope -1/2")
    ax.set_xlabel("N")
    ttl = []
    if mf_fit is not None:
        ttl.append(f"mf slope {mf_fit.slope:.3f}")
    if gap_fit is not None:
        ttl.append(f"gap slope {gap_fit.slope:.3f}")
    ax.set_title(", ".join(ttl))
    ax.legend()
    out = _save(fig, path)
    plt.close(fig)
    return out
