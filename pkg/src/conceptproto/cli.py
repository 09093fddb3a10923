"""Command-line surface.

Subcommands: gen-synth, train, eval, explain, rank, sweep-concepts,
select-concepts. Flags override config-file values; every command validates
its full configuration before writing anything. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import report
from .concepts import (
    load_concepts,
    load_ground_truth_concepts,
    random_masks,
    select_top_masks,
    with_whole_input,
    write_concepts,
    write_ground_truth_concepts,
    ConceptSet,
    ConceptMask,
)
from .config import RunConfig, load_config
from .data import (
    SyntheticSpec,
    load_dataset,
    load_splits,
    make_synthetic,
    split_dataset,
    write_dataset,
    write_splits,
    zscore_apply,
    zscore_fit,
)
from .errors import ConceptProtoError, ConfigError, DataError
from .interpret import global_importance, rank_examples_by_concept, recall_at_k
from .model import (
    PrototypeBank,
    build_model,
    embed_concepts,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .nncore import DistanceKind, Mode
from .model import WeightMode
from .rngs import child_rng


def _fmt(x):
    return repr(float(x))


def _apply_overrides(cfg, args):
    """Fold CLI flags into the run config; flags win over file values."""
    for name in ("features", "labels", "splits", "concepts"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for name, target in (
        ("way", "way"),
        ("shot", "shot"),
        ("query", "query_per_class"),
    ):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.episode, target, value)
    for name in ("episodes", "lr", "weight_decay", "eval_episodes", "val_every",
                 "val_episodes", "log_every"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.train, name, value)
    for name in ("hidden_dim", "embed_dim", "dropout"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.model, name, value)
    if getattr(args, "weight_mode", None) is not None:
        cfg.model.weight_mode = WeightMode(args.weight_mode)
    if getattr(args, "distance", None) is not None:
        cfg.model.distance = DistanceKind(args.distance)
    cfg.train.seed = cfg.seed
    return cfg


def _load_run_config(args, require_data=True):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    _apply_overrides(cfg, args)
    cfg.validate(require_data=require_data)
    return cfg


def _resolve_data(cfg):
    """Load or generate the three splits plus the concept set from a config.

    Returns (train_ds, val_ds, test_ds, concept_set_or_None, ground_truth).
    The concept set returned here is the raw file/synthetic set, before the
    whole-input concept is appended.
    """
    truth = None
    if cfg.synthetic is not None:
        ds, cs, truth, splits = make_synthetic(cfg.synthetic)
        train_ds, val_ds, test_ds = split_dataset(ds, splits)
    else:
        ds = load_dataset(cfg.features, cfg.labels)
        splits = load_splits(cfg.splits)
        train_ds, val_ds, test_ds = split_dataset(ds, splits)
        cs = load_concepts(cfg.concepts, ds.n_features) if cfg.concepts else None
    if cfg.model.zscore:
        mean, sd = zscore_fit(train_ds)
        train_ds = zscore_apply(train_ds, mean, sd)
        val_ds = zscore_apply(val_ds, mean, sd)
        test_ds = zscore_apply(test_ds, mean, sd)
    return train_ds, val_ds, test_ds, cs, truth


def _model_concept_set(cfg, raw_cs, n_features, force_protonet=False):
    if force_protonet or raw_cs is None:
        if force_protonet and raw_cs is not None:
            print("warning: --protonet given, ignoring concept masks", file=sys.stderr)
        mask = ConceptMask(id=0, name="whole_input", bits=np.ones(n_features, dtype=int))
        return ConceptSet(masks=[mask], n_features=n_features)
    cs = raw_cs
    if cfg.model.whole_input_concept:
        cs = with_whole_input(cs)
    return cs


def _select_split(args, train_ds, val_ds, test_ds):
    return {"train": train_ds, "val": val_ds, "test": test_ds}[args.split]


def _check_concept_hash(model, cfg):
    """Refuse to run against a concepts file that differs from the checkpoint."""
    if cfg.concepts is None:
        return
    file_cs = load_concepts(cfg.concepts, model.concept_set.n_features)
    if cfg.model.whole_input_concept:
        file_cs = with_whole_input(file_cs)
    if file_cs.content_hash() != model.concept_set.content_hash():
        raise ConfigError(
            f"concept file {cfg.concepts} does not match the concept set "
            "embedded in the checkpoint"
        )


def _class_bank(model, ds, shot, seed):
    """One prototype per (class, concept) over a whole split.

    Support examples are a seeded sample of ``shot`` rows per class; every
    remaining row of the class is a query. Returns (bank, query_rows) where
    query_rows maps class id -> example indices.
    """
    protos = np.empty((ds.n_classes, model.n_concepts, model.embed_dim))
    query_rows = {}
    for k, idx in enumerate(ds.indices_by_class()):
        if idx.shape[0] <= shot:
            raise DataError(
                f"class '{ds.class_names[k]}' has {idx.shape[0]} examples, "
                f"needs > {shot} for a {shot}-shot bank"
            )
        rng = child_rng(seed, "class-bank", k)
        picked = rng.choice(idx, size=shot, replace=False)
        query_rows[k] = np.setdiff1d(idx, picked)
        emb, _ = embed_concepts(model, ds.x[picked], Mode.EVAL)
        protos[k] = emb.mean(axis=1)
    bank = PrototypeBank(protos=protos, classes=list(range(ds.n_classes)))
    return bank, query_rows


def cmd_gen_synth(args):
    spec = SyntheticSpec(
        n_classes=args.n_classes,
        per_class=args.per_class,
        n_blocks=args.blocks,
        block_size=args.block_size,
        n_noise_features=args.noise_features,
        signal_strength=args.signal,
        noise_sd=args.noise_sd,
        seed=args.seed if args.seed is not None else 7,
    ).validate()
    ds, cs, truth, splits = make_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(ds, os.path.join(args.out, "features.csv"), os.path.join(args.out, "labels.csv"))
    write_concepts(cs, os.path.join(args.out, "concepts.txt"))
    write_ground_truth_concepts(truth.class_blocks, os.path.join(args.out, "ground_truth_concepts.txt"))
    write_splits(splits, os.path.join(args.out, "splits.json"))
    print(f"wrote synthetic dataset ({ds.n_examples} rows, {ds.n_features} features, "
          f"{ds.n_classes} classes) to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    train_ds, val_ds, _, raw_cs, _ = _resolve_data(cfg)
    cs = _model_concept_set(cfg, raw_cs, train_ds.n_features, force_protonet=args.protonet)
    model = build_model(
        cs,
        hidden_dim=cfg.model.hidden_dim,
        embed_dim=cfg.model.embed_dim,
        weight_mode=cfg.model.weight_mode if len(cs) > 1 else WeightMode.SHARED,
        distance=cfg.model.distance,
        dropout_rate=cfg.model.dropout,
        seed=cfg.seed,
    )
    if cfg.train.episodes == 0:
        print("warning: --episodes 0, writing checkpoint of initial weights", file=sys.stderr)
    model, log = train(model, train_ds, val_ds, cfg.episode, cfg.train)

    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt = os.path.join(cfg.out_dir, "checkpoint.json")
    save_checkpoint(model, ckpt)
    log_path = os.path.join(cfg.out_dir, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    if log:
        report.save_training_curves(log, os.path.join(cfg.out_dir, "training_curve.png"))
    final_val = next((r["val_acc"] for r in reversed(log) if "val_acc" in r), None)
    print(f"checkpoint: {ckpt}")
    if final_val is not None:
        print(f"final val_acc: {final_val:.4f}")
    return 0


def cmd_eval(args):
    cfg = _load_run_config(args)
    model = load_checkpoint(args.checkpoint)
    _check_concept_hash(model, cfg)
    train_ds, val_ds, test_ds, _, _ = _resolve_data(cfg)
    ds = _select_split(args, train_ds, val_ds, test_ds)
    result = evaluate(model, ds, cfg.episode, args.eval_episodes or cfg.train.eval_episodes,
                      cfg.seed)

    os.makedirs(cfg.out_dir, exist_ok=True)
    pct = result.mean_accuracy * 100
    ci = result.ci95_halfwidth * 100
    lines = [
        f"split={args.split} way={cfg.episode.way} shot={cfg.episode.shot} "
        f"query={cfg.episode.query_per_class} "
        f"episodes={result.per_episode_accuracy.shape[0]} seed={cfg.seed}",
        f"mean_accuracy={_fmt(result.mean_accuracy)} ci95={_fmt(result.ci95_halfwidth)}",
        f"accuracy_pct={pct:.2f} +/- {ci:.2f}",
    ]
    with open(os.path.join(cfg.out_dir, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(cfg.out_dir, "eval_episodes.csv"), "w", encoding="utf-8") as fh:
        fh.write("episode,accuracy\n")
        for i, acc in enumerate(result.per_episode_accuracy):
            fh.write(f"{i},{_fmt(acc)}\n")
    report.save_accuracy_hist(result.per_episode_accuracy,
                              os.path.join(cfg.out_dir, "eval_accuracy.png"))
    print("\n".join(lines))
    return 0


def _explain_classes(args, ds):
    if args.class_name is not None:
        if args.class_name not in ds.class_names:
            raise ConfigError(
                f"unknown class '{args.class_name}'; available: {', '.join(ds.class_names)}"
            )
        return [ds.class_names.index(args.class_name)]
    return list(range(ds.n_classes))


def cmd_explain(args):
    cfg = _load_run_config(args)
    model = load_checkpoint(args.checkpoint)
    _check_concept_hash(model, cfg)
    train_ds, val_ds, test_ds, _, _ = _resolve_data(cfg)
    ds = _select_split(args, train_ds, val_ds, test_ds)
    classes = _explain_classes(args, ds)
    top_k = args.top_k if args.top_k is not None else min(20, model.n_concepts)
    if top_k > model.n_concepts:
        raise ConfigError(f"--top-k {top_k} exceeds concept count {model.n_concepts}")

    truth_by_name = None
    if args.ground_truth:
        truth_by_name = load_ground_truth_concepts(args.ground_truth)

    bank, query_rows = _class_bank(model, ds, cfg.episode.shot, cfg.seed)
    names = model.concept_set.names()

    os.makedirs(cfg.out_dir, exist_ok=True)
    txt_lines = []
    csv_lines = ["class,concept,rank,score,mean_distance"]
    figure_rows = []
    recalls = []
    recall_lines = []
    for k in classes:
        gi = global_importance(model, bank, ds.x[query_rows[k]], k,
                               reciprocal=args.reciprocal)
        cls = ds.class_names[k]
        for r, j in enumerate(gi.ranking, start=1):
            txt_lines.append(
                f"class={cls} concept={names[j]} rank={r} "
                f"score={_fmt(gi.scores[j])} mean_distance={_fmt(gi.distances[j])}"
            )
            csv_lines.append(f"{cls},{names[j]},{r},{_fmt(gi.scores[j])},{_fmt(gi.distances[j])}")
        figure_rows.append(
            (cls, [names[j] for j in gi.ranking], [gi.scores[j] for j in gi.ranking])
        )
        if truth_by_name is not None and cls in truth_by_name:
            truth_names = truth_by_name[cls]
            # Classes with fewer than two assigned concepts are excluded.
            if len(truth_names) < 2:
                continue
            unknown = [t for t in truth_names if t not in names]
            if unknown:
                raise DataError(f"ground truth for '{cls}' names unknown concepts {unknown}")
            truth_ids = {names.index(t) for t in truth_names}
            rec = recall_at_k(gi, truth_ids, k=min(top_k, model.n_concepts))
            recalls.append(rec)
            recall_lines.append(f"class={cls} recall@{min(top_k, model.n_concepts)}={_fmt(rec)}")

    with open(os.path.join(cfg.out_dir, "global_importance.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(txt_lines) + "\n")
    if args.csv:
        with open(os.path.join(cfg.out_dir, "global_importance.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(csv_lines) + "\n")
    report.save_importance_bars(figure_rows, os.path.join(cfg.out_dir, "global_importance.png"),
                                top_k)
    if recall_lines:
        macro = float(np.mean(recalls))
        recall_lines.append(f"macro_average_recall={_fmt(macro)}")
        with open(os.path.join(cfg.out_dir, "recall.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(recall_lines) + "\n")
        print(recall_lines[-1])
    print(f"wrote global importance for {len(classes)} classes to {cfg.out_dir}")
    return 0


def cmd_rank(args):
    cfg = _load_run_config(args)
    model = load_checkpoint(args.checkpoint)
    _check_concept_hash(model, cfg)
    train_ds, val_ds, test_ds, _, _ = _resolve_data(cfg)
    ds = _select_split(args, train_ds, val_ds, test_ds)
    if args.class_name not in ds.class_names:
        raise ConfigError(
            f"unknown class '{args.class_name}'; available: {', '.join(ds.class_names)}"
        )
    names = model.concept_set.names()
    if args.concept not in names:
        raise ConfigError(f"unknown concept '{args.concept}'; available: {', '.join(names)}")
    k = ds.class_names.index(args.class_name)
    j = names.index(args.concept)

    bank, query_rows = _class_bank(model, ds, cfg.episode.shot, cfg.seed)
    rows = query_rows[k]
    ranking = rank_examples_by_concept(
        model, bank.protos[k, j], ds.x[rows], j, farthest=args.farthest
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    lines = [
        f"rank={r} example={int(rows[i])} distance={_fmt(d)}"
        for r, (i, d) in enumerate(ranking, start=1)
    ]
    with open(os.path.join(cfg.out_dir, "rank.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines[: args.limit] if args.limit else lines))
    return 0


def _ordered_concepts(cs, order, seed, importance_scores=None):
    masks = list(cs.masks)
    if order == "random":
        rng = child_rng(seed, "concept-order")
        perm = rng.permutation(len(masks))
        masks = [masks[int(i)] for i in perm]
    elif order == "importance":
        if importance_scores is None:
            raise ConfigError("importance ordering requires scored concepts")
        masks = [masks[j] for j in sorted(range(len(masks)),
                                          key=lambda j: (-importance_scores[j], j))]
    return masks


def _score_concepts_on_validation(model, val_ds, shot, seed):
    """Mean per-concept importance score across validation classes."""
    bank, query_rows = _class_bank(model, val_ds, shot, seed)
    totals = np.zeros(model.n_concepts)
    for k in range(val_ds.n_classes):
        gi = global_importance(model, bank, val_ds.x[query_rows[k]], k)
        totals += gi.scores
    return totals / val_ds.n_classes


def cmd_sweep_concepts(args):
    cfg = _load_run_config(args)
    counts = sorted({int(c) for c in args.counts.split(",")})
    if counts[0] < 1:
        raise ConfigError("concept counts must be >= 1")
    train_ds, val_ds, test_ds, raw_cs, _ = _resolve_data(cfg)
    if raw_cs is None:
        raise ConfigError("sweep-concepts requires a concept set (file or synthetic)")
    # Count 1 is the whole-input-only model; count c adds the first c-1 masks.
    if counts[-1] - 1 > len(raw_cs):
        raise ConfigError(
            f"count {counts[-1]} exceeds available concepts ({len(raw_cs)} + whole input)"
        )

    importance_scores = None
    if args.order == "importance":
        probe_cs = _model_concept_set(cfg, raw_cs, train_ds.n_features)
        probe = build_model(
            probe_cs,
            hidden_dim=cfg.model.hidden_dim,
            embed_dim=cfg.model.embed_dim,
            weight_mode=cfg.model.weight_mode,
            distance=cfg.model.distance,
            dropout_rate=cfg.model.dropout,
            seed=cfg.seed,
        )
        probe_cfg = _short_train_config(cfg, args.pre_episodes)
        probe, _ = train(probe, train_ds, val_ds, cfg.episode, probe_cfg)
        # Scores for the raw masks only; whole input sits at the end.
        importance_scores = _score_concepts_on_validation(
            probe, val_ds, cfg.episode.shot, cfg.seed
        )[: len(raw_cs)]
    ordered = _ordered_concepts(raw_cs, args.order, cfg.seed, importance_scores)

    rows = []
    whole = ConceptMask(id=0, name="whole_input",
                        bits=np.ones(train_ds.n_features, dtype=int))
    for count in counts:
        masks = [whole] + ordered[: count - 1]
        cs = ConceptSet(
            masks=[ConceptMask(id=i, name=m.name, bits=m.bits.copy())
                   for i, m in enumerate(masks)],
            n_features=train_ds.n_features,
        )
        model = build_model(
            cs,
            hidden_dim=cfg.model.hidden_dim,
            embed_dim=cfg.model.embed_dim,
            weight_mode=cfg.model.weight_mode if count > 1 else WeightMode.SHARED,
            distance=cfg.model.distance,
            dropout_rate=cfg.model.dropout,
            seed=cfg.seed,
        )
        model, _ = train(model, train_ds, val_ds, cfg.episode, cfg.train)
        result = evaluate(model, test_ds, cfg.episode, cfg.train.eval_episodes, cfg.seed)
        rows.append((count, result.mean_accuracy, result.ci95_halfwidth))
        print(f"concepts={count} accuracy={result.mean_accuracy:.4f} "
              f"ci95={result.ci95_halfwidth:.4f}")

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("n_concepts,mean_accuracy,ci95\n")
        for count, mean, ci in rows:
            fh.write(f"{count},{_fmt(mean)},{_fmt(ci)}\n")
    with open(os.path.join(cfg.out_dir, "sweep.txt"), "w", encoding="utf-8") as fh:
        for count, mean, ci in rows:
            fh.write(f"n_concepts={count} mean_accuracy={_fmt(mean)} ci95={_fmt(ci)}\n")
    report.save_sweep_curve(
        [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
        os.path.join(cfg.out_dir, "sweep.png"),
    )
    return 0


def _short_train_config(cfg, episodes):
    from .model import TrainConfig

    return TrainConfig(
        episodes=episodes,
        lr=cfg.train.lr,
        weight_decay=cfg.train.weight_decay,
        eval_episodes=cfg.train.eval_episodes,
        seed=cfg.seed,
        val_every=max(1, episodes // 4) if episodes else 1,
        val_episodes=min(cfg.train.val_episodes, 50),
        log_every=cfg.train.log_every,
    )


def cmd_select_concepts(args):
    cfg = _load_run_config(args)
    if args.keep > args.n_random:
        raise ConfigError(f"--keep {args.keep} exceeds --n-random {args.n_random}")
    train_ds, val_ds, _, _, _ = _resolve_data(cfg)
    candidates = random_masks(
        train_ds.n_features, args.n_random, args.bits, child_rng(cfg.seed, "random-masks")
    )
    cs = with_whole_input(candidates)
    model = build_model(
        cs,
        hidden_dim=cfg.model.hidden_dim,
        embed_dim=cfg.model.embed_dim,
        weight_mode=cfg.model.weight_mode,
        distance=cfg.model.distance,
        dropout_rate=cfg.model.dropout,
        seed=cfg.seed,
    )
    model, _ = train(model, train_ds, val_ds, cfg.episode,
                     _short_train_config(cfg, args.train_episodes))
    scores = _score_concepts_on_validation(model, val_ds, cfg.episode.shot, cfg.seed)
    selected = select_top_masks(candidates, scores[: args.n_random], args.keep)

    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "selected_concepts.txt")
    write_concepts(selected, out_path)
    print(f"wrote {len(selected)} selected concepts to {out_path}")
    return 0


def _add_data_flags(p):
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--features", help="features.csv path")
    p.add_argument("--labels", help="labels.csv path")
    p.add_argument("--splits", help="splits.json path")
    p.add_argument("--concepts", help="concepts.txt path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--way", type=int, help="classes per episode (default 5)")
    p.add_argument("--shot", type=int, help="support examples per class")
    p.add_argument("--query", type=int, help="query examples per class (default 16)")


def _add_model_flags(p):
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, help="hidden width (default 64)")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="embedding dim (default 64)")
    p.add_argument("--dropout", type=float, help="dropout rate (default 0.2)")
    p.add_argument("--weight-mode", dest="weight_mode",
                   choices=[m.value for m in WeightMode],
                   help="share one net across concepts or one net per concept")
    p.add_argument("--distance", choices=[d.value for d in DistanceKind],
                   help="distance kernel (default sq_euclidean)")


def _add_train_flags(p):
    p.add_argument("--episodes", type=int, help="training episodes (default 1000)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help="L2 weight decay (default 0)")
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int,
                   help="evaluation episodes (default 600)")
    p.add_argument("--val-every", dest="val_every", type=int,
                   help="validate every N episodes (default 50)")
    p.add_argument("--val-episodes", dest="val_episodes", type=int,
                   help="episodes per validation pass (default 100)")
    p.add_argument("--log-every", dest="log_every", type=int,
                   help="log every N episodes (default 10)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="conceptproto",
        description="Concept-based prototypical networks for few-shot tabular classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate the planted-block synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", type=int, default=5, help="classes per split (default 5)")
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--noise-features", type=int, default=32)
    p.add_argument("--signal", type=float, default=5.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="episodic training with best-validation selection")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--protonet", action="store_true",
                   help="train the single whole-input-concept baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over sampled episodes")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int,
                   help="episodes to sample (default 600)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="global concept importance per class")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--class", dest="class_name", help="restrict to one class")
    p.add_argument("--top-k", dest="top_k", type=int, help="ranking depth (default min(20, N))")
    p.add_argument("--ground-truth", dest="ground_truth",
                   help="ground_truth_concepts.txt for recall@K")
    p.add_argument("--reciprocal", action="store_true",
                   help="report 1/(1+d) scores instead of -d (same ranking)")
    p.add_argument("--csv", action="store_true", help="also write a flat CSV table")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("rank", help="rank a class's examples by concept-prototype distance")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--farthest", action="store_true", help="least prototypical first")
    p.add_argument("--limit", type=int, help="print only the first N lines")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("sweep-concepts", help="accuracy as a function of concept count")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--counts", required=True, help="comma-separated concept counts")
    p.add_argument("--order", choices=["given", "random", "importance"], default="given")
    p.add_argument("--pre-episodes", dest="pre_episodes", type=int, default=200,
                   help="probe-training episodes for importance ordering")
    p.set_defaults(func=cmd_sweep_concepts)

    p = sub.add_parser("select-concepts",
                       help="generate random masks and keep the most important")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--n-random", dest="n_random", type=int, required=True)
    p.add_argument("--bits", type=int, required=True, help="features per random mask")
    p.add_argument("--keep", type=int, required=True)
    p.add_argument("--train-episodes", dest="train_episodes", type=int, default=200)
    p.set_defaults(func=cmd_select_concepts)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConceptProtoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
