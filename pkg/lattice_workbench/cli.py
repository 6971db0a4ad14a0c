"""
Command-line entry point for the lattice workbench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""
import argparse
import logging
import sys

from .config import DEFAULT_LOVASZ_DELTA, DEFAULT_SEED, DEFAULT_TEMPERATURE, LOG_LEVEL
from .exceptions import DataFormatError, NotUnimodularError, SingularBasisError, WorkbenchError
from .experiment_harness import (
    DatasetSpec,
    TrainConfig,
    attach_worst_p,
    build_test_set,
    evaluate,
    generate_dataset,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train,
)
from .lll_reduction import LLLParams, defect_bound, is_siegel_reduced, run_lll
from .modules.integer_matrix import UnimodularMatrix
from .modules.lattice_core import log_defect, orthogonality_defect
from .modules.matrix_io import (
    float_matrix_to_json,
    int_matrix_to_json,
    read_dataset,
    read_integer_matrices,
    write_dataset,
    write_json_lines,
)
from .modules.report_generator import (
    emit_progress,
    print_defect_table,
    print_method_summary,
    print_worst_matrices,
    print_worst_p_summary,
    write_curve_csv,
    write_json_report,
    write_worst_p_curve,
)
from .unimodular_factorization import factor, factor_with_sign, verify_factorization

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFICATION = 3


class UsageError(Exception):
    pass


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """argparse exits with status 2 by default; usage errors here exit with 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"Error: {message}\n")


def _dataset_bases(path):
    header, bases = read_dataset(path)
    if not bases:
        raise DataFormatError(f"no matrices in {path}")
    return header, bases


def cmd_gen(args):
    if args.dim < 2:
        raise UsageError(f"--dim must be at least 2, got {args.dim}")
    if args.count < 1:
        raise UsageError(f"--count must be positive, got {args.count}")
    bases = generate_dataset(args.dim, args.count, args.seed)
    write_dataset(args.out, bases, args.seed)
    print(f"Wrote {args.count} bases of dimension {args.dim} to {args.out}")
    return EXIT_OK


def cmd_defect(args):
    _, bases = _dataset_bases(args.input)
    rows = [{"line": idx + 1, "defect": orthogonality_defect(b), "log_defect": log_defect(b)}
            for idx, b in enumerate(bases)]
    print(f"\nOrthogonality defects for {len(rows)} bases in {args.input}")
    print_defect_table(rows)
    if args.out:
        write_json_report(args.out, {"count": len(rows), "matrices": rows})
    return EXIT_OK


def cmd_lll(args):
    params = LLLParams(lovasz_delta=args.lovasz_delta)
    _, bases = _dataset_bases(args.input)
    records = []
    failures = 0
    for idx, basis in enumerate(bases):
        result = run_lll(basis, params)
        reduced = result.basis
        siegel, violations = is_siegel_reduced(reduced, params)
        bound = defect_bound(basis.shape[0])
        record = {
            "index": idx,
            "basis": float_matrix_to_json(reduced),
            "unimodular": int_matrix_to_json(result.unimodular),
            "defect_before": orthogonality_defect(basis),
            "defect_after": orthogonality_defect(reduced),
            "log_defect_before": log_defect(basis),
            "log_defect_after": log_defect(reduced),
            "siegel_reduced": siegel,
            "iterations": result.iterations,
            "swaps": result.swaps,
            "size_reductions": result.size_reductions,
            "violations": violations,
        }
        if not siegel or record["defect_after"] > bound * (1.0 + 1e-6):
            failures += 1
            logger.error(f"Matrix {idx}: LLL output fails certification ({violations[:3]})")
        records.append(record)
        emit_progress("lll", index=idx, log_defect_after=record["log_defect_after"], swaps=result.swaps)
    write_json_lines(args.out, records)
    print(f"Reduced {len(records)} bases, {failures} certification failures; results in {args.out}")
    return EXIT_VERIFICATION if failures else EXIT_OK


def cmd_factor(args):
    matrices = read_integer_matrices(args.input)
    records = []
    failures = 0
    for line_number, rows in matrices:
        try:
            matrix = UnimodularMatrix(rows)
        except NotUnimodularError as e:
            raise DataFormatError(str(e), line_number) from e
        if matrix.det == -1 and not args.allow_sign_flip:
            raise NotUnimodularError(
                f"line {line_number}: determinant is -1; factor needs det = +1 "
                "(rerun with --allow-sign-flip to use factor_with_sign)"
            )
        result = factor_with_sign(matrix) if args.allow_sign_flip else factor(matrix)
        verified = verify_factorization(result) if args.verify else None
        if verified is False:
            failures += 1
            logger.error(f"line {line_number}: factorization does not reproduce the matrix")
        record = result.to_json()
        record["line"] = line_number
        record["verified"] = verified
        records.append(record)
        emit_progress("factor", line=line_number, moves=len(result), induction_moves=result.induction_moves,
                      base_moves=result.base_moves, verified=verified)
    write_json_lines(args.out, records)
    print(f"Factored {len(records)} matrices into {sum(len(r['moves']) for r in records)} moves; results in {args.out}")
    return EXIT_VERIFICATION if failures else EXIT_OK


def cmd_train(args):
    if args.dim < 2:
        raise UsageError(f"--dim must be at least 2, got {args.dim}")
    spec = DatasetSpec(n=args.dim, train_per_epoch=args.train_per_epoch, test_count=args.test_count, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, k=args.k, learning_rate=args.lr, temperature=args.temperature,
                      loss_aggregation=args.loss_aggregation, seed=args.seed, batch_size=args.batch_size,
                      eval_every=args.eval_every, straight_through=not args.soft, layers=args.layers,
                      width=args.width, move_fill=args.move_fill, max_grad_norm=args.max_grad_norm,
                      keep_best=args.keep_best, validation_count=args.validation_count, worst_p=args.worst_p)
    optimizer = make_optimizer(cfg)
    params, curve = train(spec, cfg, progress=True, optimizer=optimizer)
    save_checkpoint(args.out_model, params, args.dim, args.seed, optimizer=optimizer, config=cfg)
    write_curve_csv(args.out_curve, curve)
    if args.out_worst_p:
        write_worst_p_curve(args.out_worst_p, curve, cfg.worst_p)
    print(f"Trained for {cfg.epochs} epochs; checkpoint {args.out_model}, curve {args.out_curve}")
    return EXIT_OK


def cmd_eval(args):
    if not 0 < args.p <= 1:
        raise UsageError(f"--p must lie in (0, 1], got {args.p}")
    params, meta = load_checkpoint(args.model)
    if args.test:
        _, test_set = _dataset_bases(args.test)
    else:
        test_set = build_test_set(DatasetSpec(n=meta["n"], test_count=args.test_count, seed=args.seed))
    report = evaluate(params, test_set, k=args.k, seed=args.seed, temperature=args.temperature,
                      lovasz_delta=args.lovasz_delta, record_timings=args.record_timings,
                      check_optimality=args.check_optimality)
    worst = attach_worst_p(report, args.p)
    if report.timings is not None:
        emit_progress("eval", **{f"{m}_seconds": round(s, 3) for m, s in report.timings.items()})
    write_json_report(args.out_report, report.to_json())

    print_method_summary(report.summary, report.count, report.n, report.k)
    print_worst_p_summary(worst, args.p)
    print_worst_matrices(report.per_matrix["policy"], worst["policy"]["indices"], "policy")
    return EXIT_OK


def build_parser():
    parser = WorkbenchArgumentParser(prog="lattice_workbench",
                                     description="Lattice reduction workbench: LLL, Gauss-move factorization and a learned policy")
    parser.add_argument("--log-level", type=str, default=LOG_LEVEL,
                        help=f"Logging level (default: {LOG_LEVEL})")
    subparsers = parser.add_subparsers(dest="command", help="Command to run", parser_class=WorkbenchArgumentParser)

    gen_parser = subparsers.add_parser("gen", help="Generate random bases exp(A), A_ij ~ U[0,1]")
    gen_parser.add_argument("--dim", type=int, required=True, help="Lattice dimension (>= 2)")
    gen_parser.add_argument("--count", type=int, default=1, help="Number of bases (default: 1)")
    gen_parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"Random seed (default: {DEFAULT_SEED})")
    gen_parser.add_argument("--out", type=str, required=True, help="Output JSON-lines dataset")

    defect_parser = subparsers.add_parser("defect", help="Report orthogonality defects of a dataset")
    defect_parser.add_argument("--in", dest="input", type=str, required=True, help="Input dataset")
    defect_parser.add_argument("--out", type=str, help="Optional JSON report")

    lll_parser = subparsers.add_parser("lll", help="LLL-reduce every basis of a dataset")
    lll_parser.add_argument("--in", dest="input", type=str, required=True, help="Input dataset")
    lll_parser.add_argument("--out", type=str, required=True, help="Output JSON lines (bases, certificates, defects)")
    lll_parser.add_argument("--lovasz-delta", type=float, default=DEFAULT_LOVASZ_DELTA,
                            help=f"Lovász constant in (1/4, 1] (default: {DEFAULT_LOVASZ_DELTA})")

    factor_parser = subparsers.add_parser("factor", help="Factor unimodular matrices into extended Gauss moves")
    factor_parser.add_argument("--in", dest="input", type=str, required=True, help="Input JSON lines of integer matrices")
    factor_parser.add_argument("--out", type=str, required=True, help="Output JSON lines of factorizations")
    factor_parser.add_argument("--no-verify", dest="verify", action="store_false",
                               help="Skip the exact product check")
    factor_parser.add_argument("--allow-sign-flip", action="store_true",
                               help="Accept det -1 by negating the last column first")

    train_parser = subparsers.add_parser("train", help="Train the move policy")
    train_parser.add_argument("--dim", type=int, required=True, help="Lattice dimension (>= 2)")
    train_parser.add_argument("--epochs", type=int, default=200, help="Training epochs (default: 200)")
    train_parser.add_argument("--k", type=int, default=None, help="Moves per rollout (default: dim)")
    train_parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"Random seed (default: {DEFAULT_SEED})")
    train_parser.add_argument("--lr", type=float, default=1e-3, help="Learning rate (default: 0.001)")
    train_parser.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE,
                              help=f"Gumbel-Softmax temperature (default: {DEFAULT_TEMPERATURE})")
    train_parser.add_argument("--train-per-epoch", type=int, default=1000, help="Training bases per epoch (default: 1000)")
    train_parser.add_argument("--test-count", type=int, default=4000, help="Frozen test bases (default: 4000)")
    train_parser.add_argument("--batch-size", type=int, default=50, help="Bases per update (default: 50)")
    train_parser.add_argument("--eval-every", type=int, default=10, help="Epochs between test evaluations (default: 10)")
    train_parser.add_argument("--loss-aggregation", choices=["mean", "final"], default="mean",
                              help="Combine per-step losses by their mean or keep the final one (default: mean)")
    train_parser.add_argument("--soft", action="store_true", help="Train on soft relaxed moves instead of straight-through")
    train_parser.add_argument("--layers", type=int, default=3, help="Message-passing layers (default: 3)")
    train_parser.add_argument("--width", type=int, default=32, help="Hidden width (default: 32)")
    train_parser.add_argument("--move-fill", choices=["row_col", "single_entry"], default="row_col",
                              help="Fill the whole row and column of a move, or only the sampled entry")
    train_parser.add_argument("--max-grad-norm", type=float, default=1.0,
                              help="Clip the global gradient norm to this value (default: 1.0)")
    train_parser.add_argument("--no-keep-best", dest="keep_best", action="store_false",
                              help="Return the last parameters instead of the best on the validation set")
    train_parser.add_argument("--validation-count", type=int, default=200,
                              help="Validation bases used to pick the best parameters (default: 200)")
    train_parser.add_argument("--worst-p", type=float, default=0.2,
                              help="Worst-case fraction tracked at every evaluation (default: 0.2)")
    train_parser.add_argument("--out-worst-p", type=str, help="Optional JSON lines of worst-p statistics per evaluation")
    train_parser.add_argument("--out-model", type=str, required=True, help="Checkpoint JSON path")
    train_parser.add_argument("--out-curve", type=str, required=True, help="Training curve CSV path")

    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint against LLL")
    eval_parser.add_argument("--model", type=str, required=True, help="Checkpoint JSON path")
    eval_parser.add_argument("--test", type=str, help="Test dataset (default: regenerate the frozen test set)")
    eval_parser.add_argument("--test-count", type=int, default=4000, help="Size of a regenerated test set (default: 4000)")
    eval_parser.add_argument("--k", type=int, default=None, help="Moves per rollout (default: dim)")
    eval_parser.add_argument("--p", type=float, default=0.2, help="Worst-case fraction (default: 0.2)")
    eval_parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"Random seed (default: {DEFAULT_SEED})")
    eval_parser.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE,
                             help=f"Gumbel-Softmax temperature (default: {DEFAULT_TEMPERATURE})")
    eval_parser.add_argument("--lovasz-delta", type=float, default=DEFAULT_LOVASZ_DELTA,
                             help=f"Lovász constant for the LLL baseline (default: {DEFAULT_LOVASZ_DELTA})")
    eval_parser.add_argument("--record-timings", action="store_true", help="Include wall-clock timings in the report")
    eval_parser.add_argument("--check-optimality", action="store_true",
                             help="For n=2, compare LLL with bounded brute force")
    eval_parser.add_argument("--out-report", type=str, required=True, help="Report JSON path")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "defect": cmd_defect,
    "lll": cmd_lll,
    "factor": cmd_factor,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, SingularBasisError, NotUnimodularError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except WorkbenchError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA
