"""Command-line entry point: ``earid gen|features|enroll|auth|eval|attack|drift``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import NOISE_CONDITIONS, DatasetConfig, FeatureConfig, SynthConfig
from .dataset import gen_population, load_dataset
from .ecc import CODE_PARAMS
from .features import extract_features
from .keygen import HelperData, population_stats
from .protocol import CredentialStore, earbud_enroll_messages, earbud_session, enrollment_session, verifier_session

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_TARGET_MISS = 2


def parse_trials(text: str) -> list[int]:
    """'0,1,4-7' -> [0, 1, 4, 5, 6, 7]."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty scan list")
    return out


def _write_json(path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _subject_scans(ds, subject: str, trials) -> np.ndarray:
    if subject not in ds.genuine_ids:
        raise SystemExit(f"unknown subject {subject!r}")
    return ds.responses(subject, trials=trials)


def _default_projection_seed(subject: str, seed: int) -> int:
    return int.from_bytes(hashlib.sha256(subject.encode()).digest()[:8], "little") ^ seed


def cmd_gen(args) -> int:
    synth = SynthConfig() if args.jitter is None else dataclasses.replace(SynthConfig(), wear_jitter=args.jitter)
    cfg = DatasetConfig(n_subjects=args.subjects, scans_per_subject=args.scans, n_enroll=args.enroll,
                        population_seed=args.seed, noise=args.noise, attacks=args.attacks, synth=synth)
    ds = gen_population(cfg, args.out)
    print(f"wrote {len(ds.scans)} scans for {len(ds.subjects)} profiles to {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    ds = load_dataset(args.inp)
    feat = extract_features(list(_subject_scans(ds, args.subject, args.scans)), FeatureConfig())
    _write_json(args.out, [float(v) for v in feat.coefficients])
    return EXIT_OK


def cmd_enroll(args) -> int:
    ds = load_dataset(args.inp)
    if args.gallery == "rest":
        gallery = [s for s in ds.genuine_ids if s != args.subject]
    else:
        gallery = [g.strip() for g in args.gallery.split(",") if g.strip()]
    if args.subject in gallery:
        raise SystemExit("the gallery must not contain the enrolling subject")
    missing = [g for g in gallery if g not in ds.genuine_ids]
    if missing:
        raise SystemExit(f"unknown gallery subjects: {missing}")
    fcfg = FeatureConfig()
    per_scan = [extract_features([h], fcfg).coefficients for g in gallery for h in ds.responses(g)]
    stats = population_stats(np.vstack(per_scan))
    scans = _subject_scans(ds, args.subject, range(ds.config.n_enroll))
    seed = _default_projection_seed(args.subject, 0) if args.projection_seed is None else args.projection_seed
    store = CredentialStore(args.store) if args.store else None
    cred, helper_msg = enrollment_session(earbud_enroll_messages(args.subject, scans, fcfg), stats, args.ecc,
                                          seed, store=store, trusted_channel=True, feature_cfg=fcfg)
    Path(args.out_key).write_bytes(cred.key.to_bytes())
    Path(args.out_helper).write_bytes(helper_msg.payload)
    helper = HelperData.from_bytes(helper_msg.payload)
    print(f"enrolled {args.subject}: L={cred.key.key_length}, retained {int(helper.mask.sum())} of {helper.mask.size} dims")
    return EXIT_OK


def cmd_auth(args) -> int:
    ds = load_dataset(args.inp)
    helper = HelperData.from_bytes(Path(args.helper).read_bytes())
    n_enroll = ds.config.n_enroll
    trials = args.scans if args.scans is not None else [n_enroll, n_enroll + 1]
    scans = _subject_scans(ds, args.subject, trials)
    claim = args.claim or args.subject
    msg = earbud_session(list(scans), helper, args.ecc, claim)
    result = verifier_session(msg.to_bytes(), CredentialStore(args.store))
    print("ACCEPT" if result.accepted else f"REJECT{(' (' + result.reason + ')') if result.reason else ''}")
    return EXIT_OK if result.accepted else EXIT_REJECT


def cmd_eval(args) -> int:
    from .harness import evaluate

    rep = evaluate(load_dataset(args.inp), args.ecc, args.seed, args.trials)
    d = rep.to_dict()
    r = d["rates"]
    print(f"{args.ecc}: FRR {r['frr']:.4f} FAR {r['far']:.4f} EER {r['eer']:.4f} BAC {r['bac']:.4f} "
          f"(t={r['threshold_bits']}, {d['genuine_attempts']} genuine / {d['impostor_attempts']} impostor)")
    if args.json:
        _write_json(args.json, d)
    return EXIT_TARGET_MISS if args.strict and not rep.meets_targets() else EXIT_OK


def cmd_attack(args) -> int:
    from .harness import attack_suite

    rep = attack_suite(load_dataset(args.inp), args.ecc, args.seed, args.trials)
    print(f"{args.ecc}: P-ASR {rep.p_asr:.4f} S-ASR {rep.s_asr:.4f} U-ASR {rep.u_asr:.4f} "
          f"K-ASR {rep.k_asr:.4f} FT {rep.ft_rate:.4f}")
    if args.json:
        _write_json(args.json, rep.to_dict())
    return EXIT_TARGET_MISS if args.strict and not rep.meets_targets() else EXIT_OK


def cmd_drift(args) -> int:
    from .harness import drift_eval

    rep = drift_eval(load_dataset(args.inp), args.ecc, args.periods, args.mode, args.attempts, args.rate, args.seed)
    for p in rep.periods:
        g, i = p["genuine_bits"], p["passive_bits"]
        print(f"period {p['period']} ({p['noise_condition']}, jitter {p['wear_jitter']:.3f}): genuine "
              f"{g['min_bits']}-{g['max_bits']} bits, {p['genuine_within_t']:.1%} <= {rep.threshold_bits}; "
              f"passive {i['min_bits']}-{i['max_bits']} bits")
    if args.json:
        _write_json(args.json, rep.to_dict())
    return EXIT_TARGET_MISS if args.strict and not rep.meets_targets() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="earid", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    ecc = dict(choices=sorted(CODE_PARAMS), default="bch255")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int, default=44)
    p.add_argument("--scans", type=int, default=40)
    p.add_argument("--enroll", type=int, default=8)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--noise", choices=[*NOISE_CONDITIONS, "mixed"], default="Quiet")
    p.add_argument("--jitter", type=float, default=None, help="override the calibrated wear jitter")
    p.add_argument("--attacks", action="store_true", help="also write attack and false-trigger corpora")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("features", help="dump one cepstral feature as JSON")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--scans", type=parse_trials, required=True, help="trial list, e.g. 0-7 or 8,9")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("enroll", help="enroll a subject against a gallery")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--gallery", required=True, help="comma-separated subject ids, or 'rest'")
    p.add_argument("--ecc", **ecc)
    p.add_argument("--projection-seed", type=int, default=None)
    p.add_argument("--store", default=None, help="credential store directory")
    p.add_argument("--out-key", required=True)
    p.add_argument("--out-helper", required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("auth", help="authenticate scans against a stored credential")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--subject", required=True, help="whose scans are presented")
    p.add_argument("--claim", default=None, help="claimed identity (default: --subject)")
    p.add_argument("--scans", type=parse_trials, default=None, help="trial list (default: first auth pair)")
    p.add_argument("--helper", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--ecc", **ecc)
    p.set_defaults(func=cmd_auth)

    for name, func, helptext in (("eval", cmd_eval, "FRR/FAR/EER/BAC over regrouped galleries"),
                                 ("attack", cmd_attack, "attack success rates")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--in", dest="inp", required=True)
        p.add_argument("--ecc", **ecc)
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", default=None)
        p.add_argument("--strict", action="store_true", help="exit 2 when a target is missed")
        p.set_defaults(func=func)

    p = sub.add_parser("drift", help="cross-day / cross-session drift study")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ecc", **ecc)
    p.add_argument("--periods", type=int, default=5)
    p.add_argument("--mode", choices=["day", "session"], default="day")
    p.add_argument("--attempts", type=int, default=5, help="attempts per user per period")
    p.add_argument("--rate", type=float, default=0.05, help="jitter growth per period")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_drift)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
