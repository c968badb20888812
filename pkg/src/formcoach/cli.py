"""Command-line interface.

Subcommands:

* ``assess``      — load candidate + reference keypoint files, run the full
                    pipeline and write a report plus SVG visual aids.
* ``synth``       — generate a synthetic sequence + annotation from a motion
                    spec file.
* ``train``       — train the transformer scorer on a directory of sequence /
                    annotation pairs, writing a checkpoint and loss CSV.
* ``score-model`` — score a sequence with a trained checkpoint; optionally
                    append the scores to an existing report.

Exit codes: 0 success, 2 validation error, 3 degenerate input data,
4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence as Seq, Tuple

import numpy as np

from . import sttf
from .assessment import (AssessmentResult, assess_pair, load_report,
                         report_to_dict, save_report)
from .config import ExerciseConfig, load_exercise_config
from .correction import VisualAid, build_aid, local_root_for, render_svg
from .normalize import DegenerateSkeletonError, OccludedJointError, normalize_local
from .skeleton import (Sequence, ValidationError, joint_from_name, load_annotation,
                       load_sequence, save_annotation, save_sequence,
                       write_json_atomic, write_text_atomic)
from .synth import InjectedError, MotionSpec, generate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3
EXIT_DIVERGED = 4


def build_frame_aids(cand: Sequence, ref: Sequence, result: AssessmentResult,
                     config: ExerciseConfig) -> List[VisualAid]:
    """One visual aid per flagged candidate frame, arrows per flagged joint."""
    by_frame: Dict[int, list] = {}
    for flag in result.flags:
        by_frame.setdefault(flag.frame_index, []).append(flag)
    captions = {}
    for corr in result.report.corrections:
        captions.setdefault(corr.joint, corr.text)
    ref_for_cand = {}
    for i, j in result.path.pairs:
        ref_for_cand.setdefault(i, j)

    aids = []
    for idx in sorted(by_frame):
        cand_frame = cand.frames[idx]
        ref_frame = ref.frames[ref_for_cand[idx]]
        by_root: Dict = {}
        for flag in by_frame[idx]:
            root = local_root_for(flag.joint, config.body_class)
            by_root.setdefault(root, []).append(flag.joint)
        arrows = []
        texts = []
        for root in sorted(by_root):
            try:
                cand_local = normalize_local(cand_frame, root,
                                             config.occlusion_threshold)
                ref_local = normalize_local(ref_frame, root,
                                            config.occlusion_threshold)
            except (DegenerateSkeletonError, OccludedJointError):
                continue
            part = build_aid(cand_frame, cand_local.transform, ref_local,
                             by_root[root], captions,
                             occlusion_threshold=config.occlusion_threshold)
            arrows.extend(part.arrows)
            if part.caption:
                texts.append(part.caption)
        arrows.sort(key=lambda a: a.joint)
        aids.append(VisualAid(frame_id=cand_frame.frame_id,
                              arrows=tuple(arrows), caption="; ".join(texts)))
    return aids


def _aux_scores(model: "sttf.STTFModel", seq: Sequence,
                occlusion_threshold: float) -> Dict[str, float]:
    x = sttf.sequence_to_model_input(seq, model.config.seq_len,
                                     occlusion_threshold)
    scores, _logits = model.forward(x)
    return {
        "joint": float(scores[0]) * 100.0,
        "pace": float(scores[1]) * 100.0,
        "range": float(scores[2]) * 100.0,
    }


def _assess_one(cand_path: Path, ref: Sequence, config: ExerciseConfig,
                out_dir: Path, aux_model) -> str:
    cand = load_sequence(cand_path)
    result = assess_pair(cand, ref, config)
    report = result.report
    if aux_model is not None:
        report.aux_scores = _aux_scores(aux_model, cand,
                                        config.occlusion_threshold)

    stem = cand_path.stem
    for suffix in (".sequence", ".keypoints"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    save_report(report, out_dir / f"{stem}_report.json")

    aids = build_frame_aids(cand, ref, result, config)
    index = []
    for aid in aids:
        name = f"{stem}_{aid.frame_id}_aid.svg"
        frame = next(f for f in cand.frames if f.frame_id == aid.frame_id)
        write_text_atomic(out_dir / name, render_svg(aid, frame))
        index.append({
            "frame_id": aid.frame_id,
            "file": name,
            "joints": [a.joint.name.lower() for a in aid.arrows],
        })
    write_json_atomic(out_dir / f"{stem}_aids_index.json", index)

    rng = "/" if report.range_score is None else f"{report.range_score:.1f}"
    corr = "; ".join(c.text for c in report.corrections)
    return (f"{report.name}  {report.body_class}  "
            f"joint={report.joint_score:.1f}  pace={report.pace_score:.1f}  "
            f"range={rng}  correction={corr or '-'}")


def cmd_assess(args) -> int:
    try:
        config = load_exercise_config(args.config)
        ref = load_sequence(args.reference)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    aux_model = None
    if args.aux_model:
        try:
            aux_model = sttf.load_checkpoint(args.aux_model)
        except (FileNotFoundError, ValidationError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_VALIDATION

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidates = [Path(p) for p in args.candidate]

    def run(path: Path) -> Tuple[int, str]:
        try:
            return EXIT_OK, _assess_one(path, ref, config, out_dir, aux_model)
        except FileNotFoundError as e:
            return EXIT_VALIDATION, f"error: {e}"
        except DegenerateSkeletonError as e:
            return EXIT_DEGENERATE, f"error: degenerate data in {path}: {e}"
        except (ValidationError, OccludedJointError, ValueError) as e:
            return EXIT_VALIDATION, f"error: {path}: {e}"

    if args.jobs > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, candidates))
    else:
        results = [run(p) for p in candidates]

    code = EXIT_OK
    for rc, line in results:
        print(line, file=sys.stderr if rc else sys.stdout)
        code = max(code, rc)
    return code


def _motion_spec_from_file(path: Path) -> MotionSpec:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or "template" not in doc:
        raise ValidationError(f"{path}: motion spec needs a 'template' key")
    errors = tuple(
        InjectedError(
            kind=e.get("type", e.get("kind")),
            magnitude=float(e["magnitude"]),
            joint=None if e.get("joint") is None else joint_from_name(e["joint"]),
            phase=e.get("phase", "all"),
        )
        for e in doc.get("injected_errors", [])
    )
    return MotionSpec(
        template=doc["template"],
        n_frames=int(doc.get("n_frames", 48)),
        fps=float(doc.get("fps", 30.0)),
        amplitude_deg={joint_from_name(k): float(v)
                       for k, v in doc.get("amplitude_deg", {}).items()} or None,
        noise_std=float(doc.get("noise_std", 0.0)),
        injected_errors=errors,
        class_label=doc.get("class_label"),
    )


def cmd_synth(args) -> int:
    try:
        spec = _motion_spec_from_file(Path(args.spec))
        seq, ann = generate(spec, seed=args.seed)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, KeyError) as e:
        print(f"error: invalid motion spec: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.template}_{args.seed}"
    save_sequence(seq, out_dir / f"{stem}.sequence.json")
    save_annotation(ann, out_dir / f"{stem}.annotation.json")
    print(f"wrote {stem}.sequence.json and {stem}.annotation.json to {out_dir}")
    return EXIT_OK


def _load_train_config(path: Optional[str], args) -> Tuple[sttf.STTFConfig, int, float]:
    doc = {}
    if path:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: training config must be an object")
    cfg_fields = {f for f in sttf.STTFConfig.__dataclass_fields__}
    cfg_kwargs = {k: v for k, v in doc.items() if k in cfg_fields}
    if args.seed is not None:
        cfg_kwargs["seed"] = args.seed
    config = sttf.STTFConfig(**cfg_kwargs)
    epochs = args.epochs if args.epochs is not None else int(doc.get("epochs", 50))
    lr = args.lr if args.lr is not None else float(doc.get("lr", 1e-2))
    return config, epochs, lr


def cmd_train(args) -> int:
    dataset_dir = Path(args.dataset)
    try:
        config, epochs, lr = _load_train_config(args.config, args)
    except (FileNotFoundError, ValidationError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    seq_files = sorted(dataset_dir.glob("*.sequence.json"))
    dataset = []
    try:
        for sf in seq_files:
            af = sf.with_name(sf.name.replace(".sequence.json", ".annotation.json"))
            if not af.exists():
                continue
            seq = load_sequence(sf)
            ann = load_annotation(af)
            x = sttf.sequence_to_model_input(seq, config.seq_len)
            t_scores, labels = sttf.targets_from_annotation(seq, ann, config.seq_len)
            dataset.append((x, t_scores, labels))
    except (ValidationError, DegenerateSkeletonError, OccludedJointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    if not dataset:
        print(f"error: no sequence/annotation pairs in {dataset_dir}",
              file=sys.stderr)
        return EXIT_VALIDATION

    model = sttf.STTFModel(config)
    try:
        losses = sttf.train(model, dataset, epochs=epochs, lr=lr)
    except sttf.TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED

    ckpt = Path(args.checkpoint_out)
    sttf.save_checkpoint(model, ckpt)
    csv_path = args.loss_csv or str(ckpt) + ".loss.csv"
    rows = "".join(f"{i},{v!r}\n" for i, v in enumerate(losses))
    write_text_atomic(csv_path, "epoch,loss\n" + rows)
    print(f"trained {len(dataset)} examples for {epochs} epochs; "
          f"final loss {losses[-1]:.6f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_score_model(args) -> int:
    try:
        model = sttf.load_checkpoint(args.checkpoint)
        seq = load_sequence(args.sequence)
        aux = _aux_scores(model, seq, args.occlusion_threshold)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DegenerateSkeletonError as e:
        print(f"error: degenerate data: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.report:
        try:
            report = load_report(args.report)
        except (FileNotFoundError, ValidationError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        report.aux_scores = aux
        save_report(report, args.report)
    print(json.dumps(aux, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formcoach",
        description="Assess and correct exercise performances from 2D "
                    "keypoint sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="score a candidate against a reference")
    p.add_argument("--candidate", required=True, nargs="+",
                   help="candidate keypoint file(s)")
    p.add_argument("--reference", required=True, help="reference keypoint file")
    p.add_argument("--config", required=True, help="exercise config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["json"], default="json")
    p.add_argument("--aux-model", default=None,
                   help="transformer checkpoint for auxiliary scores")
    p.add_argument("--jobs", type=int, default=1,
                   help="assess candidates in parallel")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--spec", required=True, help="motion spec JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the transformer scorer")
    p.add_argument("--dataset", required=True,
                   help="directory of *.sequence.json / *.annotation.json pairs")
    p.add_argument("--config", default=None,
                   help="JSON with model/training parameters")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--loss-csv", default=None,
                   help="loss curve CSV path (default: <checkpoint>.loss.csv)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score-model", help="score a sequence with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--report", default=None,
                   help="existing report to append the scores to")
    p.add_argument("--occlusion-threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_score_model)
    return parser


def main(argv: Optional[Seq[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
