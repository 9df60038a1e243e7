"""Command-line entry point: generate / train / eval / sweep.

Runs are driven by a flat key-value config file (``section.key = value``)
plus ``--key=value`` command-line overrides; unknown keys are a hard error.
Every command is reproducible: config, overrides and seed fully determine
all output bytes.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

import numpy as np

from . import baseline, fm, sweep as sweep_mod, synth, training
from .data import (
    CF, CTR, Dataset, FeatureSpace, downsample_negatives, encode_dataset,
    read_log, split_by_time, write_log,
)

WEEK_SECONDS = 7 * 86400


class CliError(Exception):
    pass


def _parse_bool(s):
    if str(s).lower() in ("1", "true", "yes"):
        return True
    if str(s).lower() in ("0", "false", "no"):
        return False
    raise CliError(f"expected a boolean, got {s!r}")


# key -> (parser, default)
CONFIG_SPEC = {
    "seed": (int, 0),
    "out.dir": (str, "."),
    # synthetic generator
    "gen.n_users": (int, 2000),
    "gen.n_publishers": (int, 500),
    "gen.n_ads": (int, 50),
    "gen.k_true": (int, 4),
    "gen.rho": (float, 0.8),
    "gen.n_web_events": (int, 200_000),
    "gen.n_ads_events": (int, 8_000),
    "gen.label_noise": (float, 0.1),
    "gen.signal_scale": (float, 2.5),
    "gen.ctr_user_frac": (float, 0.05),
    "gen.ctr_pub_frac": (float, 0.05),
    "gen.week_boundary": (float, 0.5),
    "gen.target_pos_rate": (float, 1.0 / 6.0),
    "gen.deterministic_labels": (_parse_bool, False),
    "gen.extra_attrs": (str, ""),        # name:cardinality:signal|noise[:scale],...
    # training hyperparameters
    "hyper.alpha": (float, 0.5),
    "hyper.eta": (float, 0.05),
    "hyper.k": (int, 8),
    "hyper.epochs": (int, 30),
    "hyper.init_scale": (float, 0.01),
    "hyper.sigma2_w_web": (float, 1.0),
    "hyper.sigma2_v_web": (float, 1.0),
    "hyper.sigma2_w_d": (float, 1.0),
    "hyper.sigma2_v_d": (float, 1.0),
    "hyper.sigma2_w_ads_a": (float, 1.0),
    "hyper.sigma2_v_ads_a": (float, 1.0),
    "hyper.mu_w_web": (float, 0.0),
    "hyper.mu_v_web": (float, 0.0),
    "hyper.mu_w_ads_a": (float, 0.0),
    "hyper.mu_v_ads_a": (float, 0.0),
    # regimes and the LR baseline
    "train.regime": (str, "joint"),
    "lr.lambda": (float, 0.1),
    # data paths and preparation
    "data.cf": (str, "cf.tsv"),
    "data.ctr": (str, "ctr.tsv"),
    "data.space": (str, "space.txt"),
    "data.truth": (str, "truth.txt"),
    "data.split_boundary": (int, WEEK_SECONDS),
    "data.downsample_neg_per_pos": (float, 0.0),   # 0 = off
    # evaluation
    "eval.model": (str, "model_ads.txt"),
    "eval.test": (str, "ctr.tsv"),
    "eval.task": (str, "ctr"),
    "eval.split": (str, "test"),                   # test | train | all
    # sweeps
    "sweep.grid": (str, "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"),
    "sweep.seeds": (str, "0"),
    "sweep.regimes": (str, "base,disjoint,joint"),
    "sweep.append_attr": (str, ""),
    "sweep.base_attrs": (str, "user_id,publisher_id,ad_id"),
    "sweep.helpful_threshold": (float, 0.5),
    "sweep.none_threshold": (float, 0.2),
}


def load_config(path=None, overrides=()):
    cfg = {key: default for key, (_, default) in CONFIG_SPEC.items()}

    def assign(key, raw, origin):
        if key not in CONFIG_SPEC:
            raise CliError(f"unknown config key {key!r} ({origin})")
        parser, _ = CONFIG_SPEC[key]
        try:
            cfg[key] = parser(raw)
        except CliError:
            raise
        except Exception:
            raise CliError(f"bad value {raw!r} for config key {key!r} ({origin})")

    if path:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{ln}: expected 'key = value'")
                key, raw = (s.strip() for s in line.split("=", 1))
                assign(key, raw, f"{path}:{ln}")
    for key, raw in overrides:
        assign(key, raw, "command line")
    return cfg


def _hyper_from(cfg) -> training.HyperParams:
    return training.HyperParams(
        alpha=cfg["hyper.alpha"], eta=cfg["hyper.eta"], K=cfg["hyper.k"],
        epochs=cfg["hyper.epochs"], seed=cfg["seed"],
        init_scale=cfg["hyper.init_scale"],
        sigma2_w_web=cfg["hyper.sigma2_w_web"], sigma2_V_web=cfg["hyper.sigma2_v_web"],
        sigma2_w_d=cfg["hyper.sigma2_w_d"], sigma2_V_d=cfg["hyper.sigma2_v_d"],
        sigma2_w_ads_a=cfg["hyper.sigma2_w_ads_a"],
        sigma2_V_ads_a=cfg["hyper.sigma2_v_ads_a"],
        mu_w_web=cfg["hyper.mu_w_web"], mu_V_web=cfg["hyper.mu_v_web"],
        mu_w_ads_a=cfg["hyper.mu_w_ads_a"], mu_V_ads_a=cfg["hyper.mu_v_ads_a"],
    )


def _gen_config_from(cfg) -> synth.GenConfig:
    extra = []
    if cfg["gen.extra_attrs"]:
        for item in cfg["gen.extra_attrs"].split(","):
            parts = item.strip().split(":")
            if len(parts) not in (3, 4) or parts[2] not in ("signal", "noise"):
                raise CliError(
                    f"bad gen.extra_attrs entry {item!r}; "
                    "expected name:cardinality:signal|noise[:scale]"
                )
            extra.append(synth.ExtraAttr(
                name=parts[0], cardinality=int(parts[1]),
                signal=parts[2] == "signal",
                scale=float(parts[3]) if len(parts) == 4 else 1.0,
            ))
    return synth.GenConfig(
        n_users=cfg["gen.n_users"], n_publishers=cfg["gen.n_publishers"],
        n_ads=cfg["gen.n_ads"], k_true=cfg["gen.k_true"], rho=cfg["gen.rho"],
        n_web_events=cfg["gen.n_web_events"], n_ads_events=cfg["gen.n_ads_events"],
        label_noise=cfg["gen.label_noise"],
        signal_scale=cfg["gen.signal_scale"],
        ctr_user_frac=cfg["gen.ctr_user_frac"],
        ctr_pub_frac=cfg["gen.ctr_pub_frac"],
        extra_attrs=tuple(extra),
        week_boundary=cfg["gen.week_boundary"],
        target_pos_rate=cfg["gen.target_pos_rate"],
        deterministic_labels=cfg["gen.deterministic_labels"],
        seed=cfg["seed"],
    )


def _out(cfg, name):
    os.makedirs(cfg["out.dir"], exist_ok=True)
    return os.path.join(cfg["out.dir"], name)


def _path(cfg, key):
    p = cfg[key]
    if not os.path.isabs(p) and not os.path.exists(p):
        candidate = os.path.join(cfg["out.dir"], p)
        if os.path.exists(candidate):
            return candidate
    return p


def _load_inputs(cfg):
    space = FeatureSpace.load(_path(cfg, "data.space"))
    web_records = read_log(_path(cfg, "data.cf"))
    ads_records = read_log(_path(cfg, "data.ctr"))
    boundary = cfg["data.split_boundary"]
    d_web = encode_dataset(web_records, CF, space)
    d_ads = encode_dataset(ads_records, CTR, space)
    d_web_train, _ = split_by_time(d_web, boundary)
    d_ads_train, d_ads_test = split_by_time(d_ads, boundary)
    ratio = cfg["data.downsample_neg_per_pos"]
    if ratio > 0:
        d_ads_train = downsample_negatives(d_ads_train, ratio, cfg["seed"])
        if d_ads_train.warning:
            print(f"warning: {d_ads_train.warning}", file=sys.stderr)
    return space, web_records, ads_records, d_web_train, d_ads_train, d_ads_test


def cmd_generate(cfg) -> int:
    gen_cfg = _gen_config_from(cfg)
    web_records, ads_records, schema, truth = synth.generate_records(gen_cfg)
    from .data import build_feature_space

    space = build_feature_space(
        [rec for _, _, rec in web_records] + [rec for _, _, rec in ads_records], schema
    )
    write_log(_out(cfg, "cf.tsv"), web_records)
    write_log(_out(cfg, "ctr.tsv"), ads_records)
    space.save(_out(cfg, "space.txt"))
    truth.save(_out(cfg, "truth.txt"))
    print(f"wrote {len(web_records)} CF and {len(ads_records)} CTR events to {cfg['out.dir']}")
    return 0


def cmd_train(cfg) -> int:
    space, _, _, d_web_train, d_ads_train, _ = _load_inputs(cfg)
    regime = cfg["train.regime"]
    hyper = _hyper_from(cfg)
    space_hash = space.content_hash()
    if regime == sweep_mod.DISJOINT_LR:
        lam = cfg["lr.lambda"]
        lr_web = baseline.train_lr_cf(d_web_train, lam, hyper.eta, hyper.epochs, hyper.seed)
        lr_ads = baseline.train_lr_ctr_transfer(
            d_ads_train, lr_web.w, lam, hyper.eta, hyper.epochs, hyper.seed)
        baseline.save_lr_model(lr_web, _out(cfg, "model_lr_web.txt"), space_hash)
        baseline.save_lr_model(lr_ads, _out(cfg, "model_lr.txt"), space_hash)
        print(f"trained disjointlr (lambda={lam}); wrote model_lr_web.txt, model_lr.txt")
        return 0
    if regime not in training.REGIMES:
        raise CliError(f"unknown train.regime {regime!r}")
    jm, report = training.train(space, d_web_train, d_ads_train, hyper, regime)
    if regime != training.BASE:
        fm.save_model(jm.web, _out(cfg, "model_web.txt"), space_hash)
    fm.save_model(jm.ads, _out(cfg, "model_ads.txt"), space_hash)
    report.to_csv(_out(cfg, "report.csv"))
    print(f"trained {regime}; final objective {report.objective[-1]:.6f}; "
          f"wrote model files and report.csv")
    return 0


def cmd_eval(cfg) -> int:
    space = FeatureSpace.load(_path(cfg, "data.space"))
    records = read_log(_path(cfg, "eval.test"))
    boundary = cfg["data.split_boundary"]
    split = cfg["eval.split"]
    if split == "test":
        records = [r for r in records if r[0] >= boundary]
    elif split == "train":
        records = [r for r in records if r[0] < boundary]
    elif split != "all":
        raise CliError(f"eval.split must be test, train or all, got {split!r}")
    task = {"cf": CF, "ctr": CTR}.get(cfg["eval.task"])
    if task is None:
        raise CliError(f"eval.task must be cf or ctr, got {cfg['eval.task']!r}")

    model_path = _path(cfg, "eval.model")
    with open(model_path, encoding="utf-8") as fh:
        magic = fh.readline().strip()
    labels = np.array([y for _, y, _ in records])
    if magic == fm.MODEL_MAGIC:
        model, space_hash = fm.load_model(model_path)
        if space_hash not in ("-", space.content_hash()):
            raise CliError(f"model {model_path} was trained on a different feature space")
        if model.task != task:
            raise CliError(f"model task {model.task} does not match eval.task")
        d = encode_dataset(records, task, space)
        scores = fm.score_dataset(model, d)
    elif magic == baseline.LR_MAGIC:
        model, space_hash = baseline.load_lr_model(model_path)
        if space_hash not in ("-", space.content_hash()):
            raise CliError(f"model {model_path} was trained on a different feature space")
        d = encode_dataset(records, task, space)
        scores = baseline.lr_scores(model, d)
    elif magic == synth.TRUTH_MAGIC:
        truth = synth.TruthModel.load(model_path)
        scores = truth.score_records(records, task)
    else:
        raise CliError(f"{model_path}: unrecognized model file")

    report = sweep_mod.evaluate_scores(
        scores, labels,
        regime=os.path.splitext(os.path.basename(model_path))[0],
        seed=cfg["seed"],
    )
    out_path = _out(cfg, "eval.csv")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sweep_mod.SWEEP_HEADER + "\n")
        fh.write(f"{report.regime},,{report.seed},{report.auc!r},{report.rmse!r},"
                 f"{report.n_pos},{report.n_neg}\n")
    print(f"auc={report.auc:.4f} rmse={report.rmse:.4f} "
          f"n_pos={report.n_pos} n_neg={report.n_neg}")
    return 0


def cmd_sweep(cfg) -> int:
    space, web_records, ads_records, d_web_train, d_ads_train, d_ads_test = _load_inputs(cfg)
    hyper = _hyper_from(cfg)
    grid = [float(a) for a in cfg["sweep.grid"].split(",")]
    seeds = [int(s) for s in cfg["sweep.seeds"].split(",")]
    if cfg["sweep.append_attr"]:
        result, best, verdict = sweep_mod.feature_appending_experiment(
            web_records, ads_records, dict(space.attr_group),
            [a.strip() for a in cfg["sweep.base_attrs"].split(",")],
            cfg["sweep.append_attr"],
            cfg["data.split_boundary"], hyper, grid, seeds,
            helpful_threshold=cfg["sweep.helpful_threshold"],
            none_threshold=cfg["sweep.none_threshold"],
        )
        result.to_csv(_out(cfg, "sweep.csv"))
        with open(_out(cfg, "verdict.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"attribute {cfg['sweep.append_attr']}\n")
            fh.write(f"best_alpha {best!r}\n")
            fh.write(f"verdict {verdict}\n")
        print(f"appended {cfg['sweep.append_attr']}: best alpha {best}, verdict {verdict}")
        return 0
    regimes = [r.strip() for r in cfg["sweep.regimes"].split(",")]
    result = sweep_mod.alpha_sweep(space, d_web_train, d_ads_train, d_ads_test,
                                   hyper, grid, regimes, seeds,
                                   lr_lambda=cfg["lr.lambda"])
    result.to_csv(_out(cfg, "sweep.csv"))
    print(f"wrote {len(result.rows)} sweep rows to sweep.csv")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}

_OVERRIDE_RE = re.compile(r"^--([A-Za-z0-9_.]+)=(.*)$", re.S)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xferfm",
        description="Transferred factorisation machines: generate, train, eval, sweep.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="flat key-value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument("--out", default=None, help="output directory")
    args, rest = parser.parse_known_args(argv)

    try:
        overrides = []
        for token in rest:
            m = _OVERRIDE_RE.match(token)
            if not m:
                raise CliError(f"unrecognized argument {token!r}; overrides use --key=value")
            overrides.append((m.group(1), m.group(2)))
        if args.seed is not None:
            overrides.append(("seed", str(args.seed)))
        if args.out is not None:
            overrides.append(("out.dir", args.out))
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
