"""Command-line surface tying the pipeline stages together.

Subcommands: ``generate``, ``train-diagnosis``, ``train-prognosis``,
``finetune``, ``diagnose``, ``prognose``, ``fit-dva``, ``explain``,
``evaluate``.  Every command writes a run manifest next to its primary
output (``<out stem>.run.json``) recording the exact command line, the
seed, config/dataset hashes, and the hashes of artifacts read or
written, so a run is reproducible from the manifest alone.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.  Failures print a single line to stderr of the
form ``celldx: error: <ExceptionName>: <message>``.

All randomness inside a command flows from its ``--seed``.  ``--jobs``
is accepted where stages are embarrassingly parallel; execution is
sequential regardless, so results never depend on the worker count.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import canonical_json, load_artifact, save_artifact
from .attribution import explain_decoder, explain_encoder
from .curves import ChargeSegment, PseudoOcvCurve, differential_voltage
from .diagnosis import (
    DEFAULT_M,
    DEFAULT_P,
    DiagnosisArtifact,
    DiagnosisReport,
    diagnose,
    finetune,
    predict_rows,
    train_diagnosis,
    window_features,
)
from .dvafit import PsoConfig, fit_dataset, write_fit_table
from .errors import ArtifactMismatch, NumericalFailure, ParseError, ValidationError
from .mechanistic import DegradationModes, MechanisticState, StateBounds
from .metrics import MetricsTable
from .nn import TrainConfig
from .ocp import synthetic_tables
from .prognosis import (
    DEFAULT_K,
    EOL_FRACTION,
    PrognosisArtifact,
    cycle_life_predictions,
    prognose,
    train_prognosis,
)
from .synthfleet import (
    FleetConfig,
    config_from_ini,
    config_hash,
    config_to_ini,
    dynamic_config,
    fleet_fresh_state,
    generate_fleet,
    read_dataset,
    write_dataset,
    write_manifest,
)

_DEFAULT_TRAIN = TrainConfig()


class _UsageError(Exception):
    """Bad command line; carries the usage text for stderr."""

    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags, which collides with our
    # data-error code; raise instead and let main() map it to 1.
    def error(self, message):
        raise _UsageError(message, self.format_usage())


# ---------------------------------------------------------------------------
# argument conversion helpers (failures surface as usage errors)


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _float_tuple(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _output_selector(text: str):
    """``soh`` / ``cycle-life`` or indexed ``voltage:3`` / ``efc:7``."""
    if ":" not in text:
        return text
    kind, _, idx = text.partition(":")
    try:
        return (kind, int(idx))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad output index in {text!r}")


# ---------------------------------------------------------------------------
# shared plumbing


def _file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _prepare_out(path) -> Path:
    out = Path(path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_manifest(out, args, *, started, config_hash=None, datasets=None, artifacts=None):
    manifest = {
        "schema_version": 1,
        "tool": "celldx",
        "tool_version": __version__,
        "command": list(args.argv),
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "config_hash": config_hash,
        "dataset_hashes": datasets or {},
        "artifact_hashes": artifacts or {},
        "started": started,
        "finished": _utc_now(),
    }
    path = Path(out).with_suffix(".run.json")
    path.write_text(canonical_json(manifest) + "\n")
    return path


def _load_diagnosis(path) -> DiagnosisArtifact:
    return DiagnosisArtifact.from_payload(load_artifact(path, kind="diagnosis"))


def _load_prognosis(path) -> PrognosisArtifact:
    return PrognosisArtifact.from_payload(load_artifact(path, kind="prognosis"))


def _fleet_config(args, data_path=None) -> FleetConfig:
    """Explicit --fleet-config, else the sidecar written by generate,
    else generator defaults."""
    if getattr(args, "fleet_config", None):
        return config_from_ini(Path(args.fleet_config).read_text())
    if data_path is not None:
        sidecar = Path(data_path).with_suffix(".config.ini")
        if sidecar.exists():
            return config_from_ini(sidecar.read_text())
    return FleetConfig()


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        validation_fraction=args.validation_fraction,
        seed=args.seed,
        hidden=args.hidden,
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        lambda_q=args.lambda_q,
        eta=args.eta,
        zeta=args.zeta,
    )


def _add_train_flags(sub):
    sub.add_argument("--epochs", type=int, default=_DEFAULT_TRAIN.max_epochs)
    sub.add_argument("--patience", type=int, default=_DEFAULT_TRAIN.patience)
    sub.add_argument("--lr", type=float, default=_DEFAULT_TRAIN.lr)
    sub.add_argument("--batch-size", type=int, default=_DEFAULT_TRAIN.batch_size)
    sub.add_argument("--validation-fraction", type=float,
                     default=_DEFAULT_TRAIN.validation_fraction)
    sub.add_argument("--hidden", type=_int_tuple, default=_DEFAULT_TRAIN.hidden,
                     help="comma-separated layer widths")
    sub.add_argument("--alpha", type=float, default=_DEFAULT_TRAIN.alpha)
    sub.add_argument("--beta", type=float, default=_DEFAULT_TRAIN.beta)
    sub.add_argument("--gamma", type=_float_tuple, default=_DEFAULT_TRAIN.gamma)
    sub.add_argument("--lambda-q", type=float, default=_DEFAULT_TRAIN.lambda_q)
    sub.add_argument("--eta", type=float, default=_DEFAULT_TRAIN.eta)
    sub.add_argument("--zeta", type=_float_tuple, default=_DEFAULT_TRAIN.zeta)


def _curve_payload(curve: PseudoOcvCurve) -> dict:
    return {
        "q_ah": curve.q.tolist(),
        "v_v": curve.v.tolist(),
        "dvdq": differential_voltage(curve).tolist(),
    }


def _subsample(rng: np.random.Generator, n: int, want: int) -> np.ndarray:
    return rng.choice(n, size=min(want, n), replace=False)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    started = _utc_now()
    if args.fleet_config:
        cfg = config_from_ini(Path(args.fleet_config).read_text())
    elif args.dynamic:
        cfg = dynamic_config()
    else:
        cfg = FleetConfig()
    if args.cells is not None:
        cfg = replace(cfg, n_cells=args.cells)

    records = generate_fleet(cfg, args.seed)
    out = _prepare_out(args.out)
    write_dataset(records, out)
    out.with_suffix(".config.ini").write_text(config_to_ini(cfg))
    summary = write_manifest(out.with_suffix(".meta.json"), cfg, args.seed, records)
    _write_run_manifest(out, args, started=started, config_hash=config_hash(cfg),
                        datasets={"fleet": _file_sha256(out)})
    print(f"wrote {summary['n_cells']} cells / {summary['n_observations']} "
          f"diagnostics -> {out}")
    return 0


def cmd_train_diagnosis(args) -> int:
    started = _utc_now()
    records = read_dataset(args.data)
    fleet_cfg = _fleet_config(args, args.data)
    ocp_p, ocp_n = synthetic_tables()
    fresh = fleet_fresh_state(fleet_cfg, ocp_p, ocp_n)

    art = train_diagnosis(
        records, ocp_p, ocp_n, _train_config(args),
        fresh_state=fresh,
        q_nominal=fleet_cfg.q_nominal,
        v_min=fleet_cfg.v_min,
        v_max=fleet_cfg.v_max,
        p=args.p,
        m=args.m,
        include_c_rate=not args.no_c_rate,
        test_fraction=args.test_fraction,
    )
    out = _prepare_out(args.out)
    save_artifact(art.to_payload(), out)
    _write_run_manifest(out, args, started=started, config_hash=config_hash(fleet_cfg),
                        datasets={"fleet": _file_sha256(args.data)},
                        artifacts={"diagnosis": art.hash})
    hist = art.history
    print(f"trained diagnosis ({hist['n_epochs']} epochs, best "
          f"{hist['best_epoch']} @ val {hist['best_val']:.6g}) -> {out}")
    return 0


def cmd_train_prognosis(args) -> int:
    started = _utc_now()
    records = read_dataset(args.data)
    diag = _load_diagnosis(args.diagnosis)
    art = train_prognosis(records, diag, _train_config(args), k=args.k, eol=args.eol)
    out = _prepare_out(args.out)
    save_artifact(art.to_payload(), out)
    _write_run_manifest(out, args, started=started,
                        datasets={"fleet": _file_sha256(args.data)},
                        artifacts={"diagnosis": diag.hash, "prognosis": art.hash})
    hist = art.history
    print(f"trained prognosis ({hist['n_epochs']} epochs, best "
          f"{hist['best_epoch']} @ val {hist['best_val']:.6g}) -> {out}")
    return 0


def cmd_finetune(args) -> int:
    started = _utc_now()
    records = read_dataset(args.data)
    parent = _load_diagnosis(args.artifact)
    tuned = finetune(parent, records, _train_config(args),
                     lr_scale=args.lr_scale, freeze_encoder=args.freeze_encoder)
    out = _prepare_out(args.out)
    save_artifact(tuned.to_payload(), out)
    _write_run_manifest(out, args, started=started,
                        datasets={"fleet": _file_sha256(args.data)},
                        artifacts={"parent": parent.hash, "finetuned": tuned.hash})
    print(f"finetuned from {parent.hash[:12]} -> {out}")
    return 0


def _report_payload(report: DiagnosisReport) -> dict:
    state = report.state
    modes = report.modes
    return {
        "schema_version": 1,
        "artifact": report.artifact,
        "efc": report.efc,
        "soh": report.soh,
        "state": {"x0": state.x0, "y0": state.y0, "cp": state.cp, "cn": state.cn},
        "modes": {"lli": modes.lli, "lam_p": modes.lam_p, "lam_n": modes.lam_n},
        "predicted_ocv": _curve_payload(report.predicted_ocv),
        "derived_ocv": _curve_payload(report.derived_ocv),
    }


def _report_from_payload(obj: dict) -> DiagnosisReport:
    try:
        return DiagnosisReport(
            predicted_ocv=PseudoOcvCurve(
                q=np.asarray(obj["predicted_ocv"]["q_ah"]),
                v=np.asarray(obj["predicted_ocv"]["v_v"]),
            ),
            derived_ocv=PseudoOcvCurve(
                q=np.asarray(obj["derived_ocv"]["q_ah"]),
                v=np.asarray(obj["derived_ocv"]["v_v"]),
            ),
            state=MechanisticState(**obj["state"]),
            modes=DegradationModes(**obj["modes"]),
            soh=float(obj["soh"]),
            efc=float(obj["efc"]),
            artifact=str(obj["artifact"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad diagnosis report: {exc}") from exc


def cmd_diagnose(args) -> int:
    started = _utc_now()
    art = _load_diagnosis(args.artifact)
    segment = ChargeSegment.from_json(Path(args.segment).read_text())
    report = diagnose(art, segment)

    out = _prepare_out(args.out)
    out.write_text(json.dumps(_report_payload(report), indent=2) + "\n")
    if args.curves:
        path = _prepare_out(args.curves)
        pred, der = report.predicted_ocv, report.derived_ocv
        dv_p = differential_voltage(pred)
        dv_d = differential_voltage(der)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["q_pred", "v_pred", "dvdq_pred",
                             "q_derived", "v_derived", "dvdq_derived"])
            writer.writerows(zip(pred.q.tolist(), pred.v.tolist(), dv_p.tolist(),
                                 der.q.tolist(), der.v.tolist(), dv_d.tolist()))
    _write_run_manifest(out, args, started=started,
                        artifacts={"diagnosis": art.hash})
    print(f"soh {report.soh:.4f} at efc {report.efc:.0f} "
          f"(x0={report.state.x0:.4f} y0={report.state.y0:.4f} "
          f"cp={report.state.cp:.4f} cn={report.state.cn:.4f}) -> {out}")
    return 0


def cmd_prognose(args) -> int:
    started = _utc_now()
    diag_art = _load_diagnosis(args.diagnosis)
    prog_art = _load_prognosis(args.prognosis)
    if prog_art.diagnosis_hash != diag_art.hash:
        raise ArtifactMismatch(
            f"prognosis artifact was trained against diagnosis "
            f"{prog_art.diagnosis_hash[:12]}, not {diag_art.hash[:12]}")
    try:
        obj = json.loads(Path(args.report).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad diagnosis report: {exc}") from exc
    report = _report_from_payload(obj)
    forecast = prognose(prog_art, report)

    model = prog_art.model
    out = _prepare_out(args.out)
    payload = {
        "schema_version": 1,
        "diagnosis_artifact": diag_art.hash,
        "prognosis_artifact": prog_art.hash,
        "from_efc": report.efc,
        "from_soh": report.soh,
        "eol": model.eol,
        "efc_seq": forecast.efc_seq.tolist(),
        "q_seq": forecast.q_seq.tolist(),
        "soh_seq": (forecast.q_seq / model.q_nominal).tolist(),
        "cycle_life_seq": forecast.cycle_life_seq,
        "cycle_life_point": forecast.cycle_life_point,
    }
    out.write_text(json.dumps(payload, indent=2) + "\n")
    if args.csv:
        path = _prepare_out(args.csv)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["efc", "q_ah", "soh"])
            writer.writerows(zip(payload["efc_seq"], payload["q_seq"],
                                 payload["soh_seq"]))
    _write_run_manifest(out, args, started=started,
                        artifacts={"diagnosis": diag_art.hash,
                                   "prognosis": prog_art.hash})
    print(f"cycle life {forecast.cycle_life_seq:.0f} EFC (sequence) / "
          f"{forecast.cycle_life_point:.0f} EFC (point) -> {out}")
    return 0


def cmd_fit_dva(args) -> int:
    started = _utc_now()
    records = read_dataset(args.data)
    fleet_cfg = _fleet_config(args, args.data)
    ocp_p, ocp_n = synthetic_tables()
    fresh = fleet_fresh_state(fleet_cfg, ocp_p, ocp_n)
    pso = PsoConfig(bounds=StateBounds.default(fleet_cfg.q_nominal),
                    particles=args.particles, iterations=args.iterations,
                    seed=args.seed)
    rows = fit_dataset(records, ocp_p, ocp_n, pso, fresh=fresh)
    out = _prepare_out(args.out)
    write_fit_table(rows, out)
    _write_run_manifest(out, args, started=started, config_hash=config_hash(fleet_cfg),
                        datasets={"fleet": _file_sha256(args.data)})
    failures = sum(1 for r in rows if r["error"])
    print(f"fit {len(rows)} observations ({failures} failures) -> {out}")
    return 0


def cmd_explain(args) -> int:
    started = _utc_now()
    diag = _load_diagnosis(args.diagnosis)
    records = read_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    artifacts = {"diagnosis": diag.hash}

    if args.target == "encoder":
        segments = [seg for rec in records for obs in rec.diagnostics
                    for seg in obs.segments]
        if not segments:
            raise ValidationError("dataset has no charge windows to explain")
        feats = np.array([window_features(diag.model, seg) for seg in segments])
        inst = _subsample(rng, len(segments), args.instances)
        back = _subsample(rng, len(segments), args.background)
        table = explain_encoder(diag, [segments[i] for i in inst], feats[back],
                                n_samples=args.samples, seed=args.seed)
    else:
        rows = predict_rows(diag, records)
        if args.prognosis:
            prog = _load_prognosis(args.prognosis)
            artifacts["prognosis"] = prog.hash
            states = rows["states"]
            feats = np.column_stack([states[:, 2], states[:, 3], states[:, 0],
                                     states[:, 1], rows["efc"], rows["soh_pred"]])
            target_art = prog
            output = args.output if args.output is not None else "cycle-life"
        else:
            feats = rows["states"]
            target_art = diag
            output = args.output if args.output is not None else "soh"
        inst = _subsample(rng, len(feats), args.instances)
        back = _subsample(rng, len(feats), args.background)
        table = explain_decoder(target_art, feats[inst], feats[back], output,
                                n_samples=args.samples, seed=args.seed)

    out = _prepare_out(args.out)
    out.write_text(table.to_csv())
    _write_run_manifest(out, args, started=started, artifacts=artifacts)
    print(f"explained {len(table.attributions)} instances "
          f"({len(table.groups)} groups x {len(table.outputs)} outputs) -> {out}")
    return 0


def _read_column(path) -> np.ndarray:
    """Single-column CSV of floats, optional header row."""
    with open(Path(path), newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ParseError(f"{path}: empty predictions file")
    start = 0
    try:
        float(rows[0][0])
    except ValueError:
        start = 1
    try:
        return np.array([float(row[0]) for row in rows[start:]])
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric value: {exc}") from exc


def cmd_evaluate(args) -> int:
    started = _utc_now()
    table = MetricsTable()
    datasets = {}
    artifacts = {}

    if args.predictions or args.targets:
        if not (args.predictions and args.targets):
            raise _UsageError("--predictions and --targets go together",
                              args.parser.format_usage())
        preds = _read_column(args.predictions)
        targets = _read_column(args.targets)
        table.add(args.task, preds, targets, unit=args.unit)
        datasets["predictions"] = _file_sha256(args.predictions)
        datasets["targets"] = _file_sha256(args.targets)
    elif args.data and args.diagnosis:
        records = read_dataset(args.data)
        diag = _load_diagnosis(args.diagnosis)
        datasets["fleet"] = _file_sha256(args.data)
        artifacts["diagnosis"] = diag.hash
        if args.split != "all":
            keep = set(diag.split[args.split])
            records = [r for r in records if r.cell_id in keep]
        if not records:
            raise ValidationError(f"no cells in split {args.split!r}")
        rows = predict_rows(diag, records)
        table.add("voltage", rows["v_pred"].ravel(), rows["v_target"].ravel(), unit="V")
        table.add("soh", rows["soh_pred"], rows["soh_true"], unit="fraction")
        if args.prognosis:
            prog = _load_prognosis(args.prognosis)
            artifacts["prognosis"] = prog.hash
            window = args.soh_window if args.soh_window else (0.0, 1.0)
            life = cycle_life_predictions(diag, prog, records,
                                          soh_window=window, eol=prog.model.eol)
            if life:
                table.add("cycle_life_seq",
                          [r["cycle_life_seq"] for r in life],
                          [r["cycle_life_true"] for r in life], unit="EFC")
                table.add("cycle_life_point",
                          [r["cycle_life_point"] for r in life],
                          [r["cycle_life_true"] for r in life], unit="EFC")
    else:
        raise _UsageError("need either --predictions/--targets or --data/--diagnosis",
                          args.parser.format_usage())

    out = _prepare_out(args.out)
    out.write_text(table.to_csv())
    _write_run_manifest(out, args, started=started,
                        datasets=datasets, artifacts=artifacts)
    print(table.render())
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="celldx",
                     description="battery health diagnosis and prognosis pipeline")
    parser.add_argument("--version", action="version", version=f"celldx {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")

    def sub(name, func, help_):
        s = subs.add_parser(name, help=help_)
        s.set_defaults(func=func)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--jobs", type=int, default=1,
                       help="worker count; results are independent of it")
        return s

    s = sub("generate", cmd_generate, "synthesize a degradation fleet")
    s.add_argument("--out", required=True, help="dataset JSONL path")
    s.add_argument("--cells", type=int, default=None)
    s.add_argument("--dynamic", action="store_true",
                   help="dynamic-discharge fleet instead of constant-current")
    s.add_argument("--fleet-config", default=None, help="INI overriding defaults")

    s = sub("train-diagnosis", cmd_train_diagnosis, "fit the state encoder/decoder")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="artifact JSON path")
    s.add_argument("--fleet-config", default=None)
    s.add_argument("--p", type=int, default=DEFAULT_P)
    s.add_argument("--m", type=int, default=DEFAULT_M)
    s.add_argument("--no-c-rate", action="store_true")
    s.add_argument("--test-fraction", type=float, default=0.25)
    _add_train_flags(s)

    s = sub("train-prognosis", cmd_train_prognosis, "fit the trajectory decoder")
    s.add_argument("--data", required=True)
    s.add_argument("--diagnosis", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--eol", type=float, default=EOL_FRACTION)
    _add_train_flags(s)

    s = sub("finetune", cmd_finetune, "continue training on a new fleet")
    s.add_argument("--artifact", required=True, help="pretrained diagnosis artifact")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr-scale", type=float, default=0.1)
    s.add_argument("--freeze-encoder", action="store_true")
    _add_train_flags(s)

    s = sub("diagnose", cmd_diagnose, "state/SOH report for one charge window")
    s.add_argument("--artifact", required=True)
    s.add_argument("--segment", required=True, help="charge window JSON")
    s.add_argument("--out", required=True, help="report JSON path")
    s.add_argument("--curves", default=None,
                   help="optional CSV of both curves with dV/dQ")

    s = sub("prognose", cmd_prognose, "forecast trajectory from a diagnosis report")
    s.add_argument("--diagnosis", required=True)
    s.add_argument("--prognosis", required=True)
    s.add_argument("--report", required=True, help="diagnose output JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--csv", default=None, help="optional trajectory CSV")

    s = sub("fit-dva", cmd_fit_dva, "swarm-fit mechanistic states per observation")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="fit table CSV path")
    s.add_argument("--fleet-config", default=None)
    s.add_argument("--particles", type=int, default=64)
    s.add_argument("--iterations", type=int, default=200)

    s = sub("explain", cmd_explain, "feature attributions for model outputs")
    s.add_argument("--diagnosis", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--prognosis", default=None,
                   help="explain the forecaster instead of the state decoder")
    s.add_argument("--target", choices=("encoder", "decoder"), default="encoder")
    s.add_argument("--output", type=_output_selector, default=None,
                   help="decoder output: soh, voltage:IDX, cycle-life, efc:IDX")
    s.add_argument("--instances", type=int, default=8)
    s.add_argument("--background", type=int, default=64)
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--out", required=True, help="attribution table CSV")

    s = sub("evaluate", cmd_evaluate, "metrics table from files or artifacts")
    s.add_argument("--predictions", default=None, help="single-column CSV")
    s.add_argument("--targets", default=None, help="single-column CSV")
    s.add_argument("--task", default="task", help="row name for file mode")
    s.add_argument("--unit", default="", help="unit echoed in file mode")
    s.add_argument("--data", default=None)
    s.add_argument("--diagnosis", default=None)
    s.add_argument("--prognosis", default=None)
    s.add_argument("--split", choices=("train", "validation", "test", "all"),
                   default="test")
    s.add_argument("--soh-window", type=_float_tuple, default=None,
                   help="lo,hi SOH band selecting the forecast diagnostic")
    s.add_argument("--out", required=True, help="metrics CSV path")
    s.set_defaults(parser=s)

    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"celldx: error: {type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(exc.usage)
        print(f"celldx: error: usage: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (None, 0) else 1

    args.argv = argv
    try:
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(exc.usage)
        print(f"celldx: error: usage: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        return _fail(exc, 3)
    except ValidationError as exc:
        return _fail(exc, 2)
    except OSError as exc:
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
