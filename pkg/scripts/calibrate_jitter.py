"""Sweep wear_jitter and report the genuine BER mode against error rates.

Usage: python scripts/calibrate_jitter.py [--jitters 0.5,0.7,0.9] [--trials 5] [--workdir DIR]
"""

import argparse
import dataclasses
import json
import tempfile
from pathlib import Path

from earid.config import DatasetConfig, SynthConfig
from earid.dataset import gen_population
from earid.harness import FeatureCache, drift_eval, evaluate


def run(jitter: float, trials: int, workdir: Path) -> dict:
    cfg = DatasetConfig(synth=dataclasses.replace(SynthConfig(), wear_jitter=jitter))
    ds = gen_population(cfg, workdir / f"jitter_{jitter:g}")
    cache = FeatureCache(ds)
    rep = evaluate(ds, "bch255", 0, trials, cache).to_dict()
    drift = drift_eval(ds, "bch255", 5, "day", cache=cache)
    return {
        "wear_jitter": jitter,
        "genuine_ber_mode": rep["genuine_ber_mode"],
        "genuine_ber_mean": rep["genuine_ber"]["mean"],
        "frr": rep["rates"]["frr"],
        "far": rep["rates"]["far"],
        "bac": rep["rates"]["bac"],
        "mean_retained_dims": rep["mean_retained_dims"],
        "drift_worst_within_t": min(p["genuine_within_t"] for p in drift.periods),
        "drift_passive_min_bits": min(p["passive_bits"]["min_bits"] for p in drift.periods),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--jitters", default="0.5,0.7,0.9,1.1")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--workdir", type=Path, default=None)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        workdir = args.workdir or Path(tmp)
        rows = [run(float(j), args.trials, workdir) for j in args.jitters.split(",")]
    for r in rows:
        print(json.dumps(r, sort_keys=True))


if __name__ == "__main__":
    main()
