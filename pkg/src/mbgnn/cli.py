"""Command-line entry point: ``mbgnn <command> ...``.

Exit codes: 0 success, 2 input-format error, 3 training divergence,
4 checkpoint corruption.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus, experiment, formats, synthetic, trainer
from .errors import InputError, MBGNNError
from .gnn import ModelConfig
from .metrics import sensitivity_run
from .netbuild import DEFAULT_THRESHOLD

TASK_DEFAULTS = {"binding": {"hidden": 64, "wd": 0.0001, "classes": 2}, "type": {"hidden": 512, "wd": 0.0005, "classes": 11}}


def _cmd_build_graphs(args):
    chains = corpus.load_chains(args.contacts, args.fasta, args.embeddings, args.labels)
    nets = corpus.stage1_graphs(chains, args.threshold)
    dim = chains[0].table.dim
    if any(c.table.dim != dim for c in chains):
        raise InputError("embedding dimension differs between chains")
    formats.write_bundle(args.out, nets, dim)
    n_res = sum(n.n_nodes for n in nets)
    print(f"Graphs\t{len(nets)}")
    print(f"Co-evolved Residues\t{n_res}")
    if args.labels is not None:
        n_pos = sum(int(n.binding.sum()) for n in nets)
        print(f"Co-evolved Metal-binding Residues\t{n_pos}")
        print(f"Metal-type Graphs\t{len(corpus.type_graphs(nets))}")
    return 0


def _cmd_train(args):
    nets, labeled = formats.read_bundle(args.bundle)
    if not labeled:
        raise InputError(f"{args.bundle}: bundle carries no labels")
    if not nets:
        raise InputError(f"{args.bundle}: bundle is empty")
    defaults = TASK_DEFAULTS[args.task]
    graphs = nets if args.task == "binding" else corpus.type_graphs(nets)
    model_cfg = ModelConfig(
        n_layers=args.layers,
        d_in=nets[0].features.shape[1],
        d_hidden=args.hidden or defaults["hidden"],
        n_classes=defaults["classes"],
        bias=not args.no_bias,
        seed=args.seed,
        aggregate=not args.no_aggregate,
    )
    train_cfg = trainer.TrainConfig(
        task=args.task,
        m_folds=args.folds,
        lr=args.lr,
        weight_decay=defaults["wd"] if args.wd is None else args.wd,
        max_epochs=args.max_epochs,
        patience=args.patience,
        batch_graphs=args.batch_graphs,
        seed=args.seed,
        dtype=args.dtype,
    )
    ck, results = trainer.train_ensemble(graphs, model_cfg, train_cfg, args.workers, log=sys.stdout)
    formats.write_checkpoint(args.out_checkpoint, ck)
    for r in results:
        print(f"# fold={r.fold} best_epoch={r.best_epoch} best_val_f1={r.best_f1:.6f} epochs_run={r.epochs_run}")
    return 0


def _load_ck(path, task):
    ck = formats.read_checkpoint(path)
    if ck.task != task:
        raise InputError(f"{path}: expected a {task} checkpoint, found {ck.task}")
    return ck


def _cmd_predict(args):
    chains = corpus.load_chains(args.contacts, args.fasta, args.embeddings)
    bck = _load_ck(args.binding_ck, "binding")
    tck = _load_ck(args.type_ck, "type")
    for c in chains:
        if c.table.dim != bck.model_config.d_in:
            raise InputError(
                f"chain {c.chain_id}: embedding dimension {c.table.dim} != checkpoint input {bck.model_config.d_in}"
            )
    from .pipeline import full_predict

    reports = [
        full_predict(c.chain_id, c.sequence, c.contacts, c.table, bck, tck, threshold=args.threshold) for c in chains
    ]
    formats.atomic_write_text(args.out_report, formats.format_report(reports))
    print(f"chains={len(reports)} calls={sum(len(r.binding_calls) for r in reports)} "
          f"positives={sum(c.call for r in reports for c in r.binding_calls)}")
    return 0


def _cmd_evaluate(args):
    rows, chains = formats.parse_report(args.report)
    labels = formats.read_labels(args.labels)
    binding, types = experiment.evaluate_rows(rows, labels, chains)
    text = experiment.format_metrics(binding, types)
    if args.out_metrics:
        formats.atomic_write_text(args.out_metrics, text)
    sys.stdout.write(text)
    return 0


def _cmd_gen_synthetic(args):
    chains = synthetic.generate(args.chains, args.seed, args.dim, args.networks_per_chain)
    corpus.write_corpus(args.out_dir, chains)
    print(f"chains={len(chains)} graphs={len(chains) * args.networks_per_chain} dim={args.dim} out={args.out_dir}")
    return 0


def _cmd_sensitivity(args):
    chains = corpus.load_corpus(args.corpus)
    dataset = experiment.split_chains(chains, args.test_fraction)
    d_in = chains[0].table.dim
    cfg = experiment.PipelineConfig.default(d_in, max_epochs=args.max_epochs, patience=args.patience)
    if args.type_hidden:
        cfg = replace(cfg, type_model=replace(cfg.type_model, d_hidden=args.type_hidden))
    summary = sensitivity_run(dataset, cfg, args.seeds, run=lambda d, c, s: experiment.run_once(d, c, s, args.workers))
    sys.stdout.write(summary.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbgnn", description="Co-evolved residue network metal-binding predictor")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-graphs", help="assemble co-evolved networks into a graph bundle")
    b.add_argument("--contacts", required=True, help="contact file, or directory of <chain>.contacts")
    b.add_argument("--fasta", required=True)
    b.add_argument("--embeddings", required=True, help="embedding file, or directory of <chain>.emb")
    b.add_argument("--labels")
    b.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_build_graphs)

    t = sub.add_parser("train", help="train an M-fold ensemble from a labeled bundle")
    t.add_argument("--bundle", required=True)
    t.add_argument("--task", choices=["binding", "type"], default="binding")
    t.add_argument("--folds", type=int, default=6)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--wd", type=float, default=None, help="weight decay (task default if omitted)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--layers", type=int, default=5)
    t.add_argument("--hidden", type=int, default=None, help="hidden width (64 binding, 512 type)")
    t.add_argument("--max-epochs", type=int, default=200)
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--batch-graphs", type=int, default=64)
    t.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    t.add_argument("--no-bias", action="store_true")
    t.add_argument("--no-aggregate", action="store_true", help="feature-only ablation")
    t.add_argument("--workers", type=int, default=None, help="fold processes (default: MBGNN_THREADS)")
    t.add_argument("--out-checkpoint", required=True)
    t.set_defaults(func=_cmd_train)

    pr = sub.add_parser("predict", help="run the two-stage pipeline and write a report")
    pr.add_argument("--contacts", required=True)
    pr.add_argument("--fasta", required=True)
    pr.add_argument("--embeddings", required=True)
    pr.add_argument("--binding-ck", required=True)
    pr.add_argument("--type-ck", required=True)
    pr.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    pr.add_argument("--out-report", required=True)
    pr.set_defaults(func=_cmd_predict)

    e = sub.add_parser("evaluate", help="score a report against a label file")
    e.add_argument("--report", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out-metrics")
    e.set_defaults(func=_cmd_evaluate)

    g = sub.add_parser("gen-synthetic", help="write a planted synthetic corpus")
    g.add_argument("--chains", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--networks-per-chain", type=int, default=4)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=_cmd_gen_synthetic)

    s = sub.add_parser("sensitivity", help="repeat train + test over several seeds")
    s.add_argument("--corpus", required=True, help="corpus directory (gen-synthetic layout)")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--max-epochs", type=int, default=200)
    s.add_argument("--patience", type=int, default=20)
    s.add_argument("--type-hidden", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=_cmd_sensitivity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MBGNNError as exc:
        print(f"mbgnn {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"mbgnn {args.command}: error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
