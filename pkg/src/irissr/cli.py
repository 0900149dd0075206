"""Command-line pipeline: synth / prep / degrade / sr / quality / match / eval.

Stages communicate only through artifacts on disk (PGM images, CSV manifests
and score files, JSON stage metadata), so external SR backends can be plugged
in and intermediates inspected. Every stage records SHA-256 hashes of its
outputs; downstream stages verify those hashes before running, which makes
interrupted pipelines resumable and stale artifacts detectable.

Exit codes: 0 ok, 2 bad config/usage, 3 missing or stale input artifact,
4 unwritable output, 5 external backend failure, 1 unexpected error.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, dataset, eigenpatch, fusion_eval, iriscode, quality, raster
from . import reproject as reproject_mod
from . import siftmatch, sr

EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_UNWRITABLE = 4
EXIT_BACKEND = 5

DEFAULT_CONFIG = {
    "crop_side": 231,
    "target_sclera_radius": 110.88,
    "synth_size": 231,
    "seeds": 20,
    "sessions": 3,
    "train_subjects": 6,
    "factors": {"1/2": [115, 115], "1/4": [57, 57],
                "1/8": [29, 29], "1/16": [15, 15]},
    "blur_sigma": None,  # null -> 0.5 * reduction factor per axis maximum
    "method": "bicubic",
    "backends": {},      # name -> {"command": ..., "exchange_dir": optional}
    "model_dir": None,   # defaults to <out>/models
    "reproject": False,
    "tau": reproject_mod.DEFAULT_TAU,
    "reproject_tol": reproject_mod.DEFAULT_TOL,
    "reproject_max_iter": reproject_mod.DEFAULT_MAX_ITER,
    "comparators": ["lg", "sift", "fused"],
    "fusion_split": False,
    "jobs": 1,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config and artifact helpers
# ---------------------------------------------------------------------------

def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise CliError(EXIT_MISSING_INPUT, f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"bad config JSON: {exc}")
        unknown = set(user) - set(cfg)
        if unknown:
            raise CliError(EXIT_CONFIG, f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    # flags win over the config file
    for key in ("jobs", "method", "tau", "reproject_tol", "reproject_max_iter"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "reproject", False):
        cfg["reproject"] = True
    if getattr(args, "fusion_split", False):
        cfg["fusion_split"] = True
    if getattr(args, "comparators", None):
        cfg["comparators"] = [c.strip() for c in args.comparators.split(",") if c.strip()]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["crop_side"] < 1:
        raise CliError(EXIT_CONFIG, "crop_side must be >= 1")
    if cfg["jobs"] < 1:
        raise CliError(EXIT_CONFIG, "jobs must be >= 1")
    if cfg["tau"] < 0:
        raise CliError(EXIT_CONFIG, "tau must be >= 0")
    seen_sizes = set()
    for label, size in cfg["factors"].items():
        if len(size) != 2 or size[0] < 1 or size[1] < 1:
            raise CliError(EXIT_CONFIG, f"factor {label!r} needs a [w, h] size")
        key = tuple(size)
        if key in seen_sizes:
            raise CliError(EXIT_CONFIG, f"factor {label!r} duplicates an LR size")
        seen_sizes.add(key)
    for comp in cfg["comparators"]:
        if comp not in ("lg", "sift", "fused"):
            raise CliError(EXIT_CONFIG, f"unknown comparator {comp!r}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def file_sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write-probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise CliError(EXIT_UNWRITABLE, f"output directory not writable: {path} ({exc})")
    return path


def write_stage_meta(stage_dir, stage, cfg, outputs, elapsed, extra=None) -> None:
    meta = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "elapsed_seconds": round(elapsed, 3),
        "outputs": {os.path.relpath(p, stage_dir): file_sha(p) for p in outputs},
    }
    if extra:
        meta["extra"] = extra
    with open(os.path.join(stage_dir, f"stage_{stage}.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_stage(stage_dir, stage) -> dict:
    """Verify a completed upstream stage: meta present, output hashes intact."""
    meta_path = os.path.join(stage_dir, f"stage_{stage}.json")
    if not os.path.exists(meta_path):
        raise CliError(EXIT_MISSING_INPUT,
                       f"missing upstream artifact: {meta_path} (run `{stage}` first)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for rel, sha in meta.get("outputs", {}).items():
        path = os.path.join(stage_dir, rel)
        if not os.path.exists(path):
            raise CliError(EXIT_MISSING_INPUT, f"stale {stage} stage: missing {path}")
        if file_sha(path) != sha:
            raise CliError(EXIT_MISSING_INPUT,
                           f"stale {stage} stage: hash mismatch for {path}")
    return meta


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def factor_slug(label: str) -> str:
    return label.replace("/", "_")


def factor_size(cfg, label):
    if label not in cfg["factors"]:
        raise CliError(EXIT_CONFIG,
                       f"factor {label!r} not in config (have {sorted(cfg['factors'])})")
    return tuple(cfg["factors"][label])


def degrade_sigma(cfg, hr_side: int, lr_size) -> float:
    if cfg["blur_sigma"] is not None:
        return float(cfg["blur_sigma"])
    return raster.antialias_sigma(hr_side, hr_side, lr_size[0], lr_size[1])


def target_records(cfg, records):
    _, target = dataset.split_by_subject(records, cfg["train_subjects"])
    return target


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_synth(cfg, args) -> int:
    t0 = time.perf_counter()
    out = ensure_dir(os.path.join(args.out, "synth"))
    img_dir = ensure_dir(os.path.join(out, "images"))
    seeds = args.seeds if args.seeds is not None else cfg["seeds"]
    sessions = args.sessions if args.sessions is not None else cfg["sessions"]
    size = cfg["synth_size"]

    jobs = [(seed, session) for seed in range(seeds) for session in range(sessions)]

    def render(job):
        seed, session = job
        img, ann = dataset.synth_iris(seed, size, jitter=session)
        name = f"s{seed:03d}_j{session}.pgm"
        raster.write_pgm(os.path.join(img_dir, name), img)
        return dataset.ManifestRecord(
            image_path=os.path.join("images", name),
            subject_id=f"s{seed:03d}", session=session, annotation=ann)

    records = _pmap(render, jobs, cfg["jobs"])
    manifest = os.path.join(out, "manifest.csv")
    dataset.save_manifest(manifest, records)
    outputs = [manifest] + [os.path.join(img_dir, f"s{s:03d}_j{j}.pgm")
                            for s, j in jobs]
    write_stage_meta(out, "synth", cfg, outputs, time.perf_counter() - t0,
                     extra={"seeds": seeds, "sessions": sessions, "size": size})
    print(f"synth: {len(records)} images -> {out}")
    return 0


def cmd_prep(cfg, args) -> int:
    t0 = time.perf_counter()
    if args.manifest:
        manifest_path = args.manifest
        src_root = os.path.dirname(os.path.abspath(manifest_path))
    else:
        synth_dir = os.path.join(args.out, "synth")
        check_stage(synth_dir, "synth")
        manifest_path = os.path.join(synth_dir, "manifest.csv")
        src_root = synth_dir
    if not os.path.exists(manifest_path):
        raise CliError(EXIT_MISSING_INPUT, f"manifest not found: {manifest_path}")
    records = dataset.load_manifest(manifest_path)

    out = ensure_dir(os.path.join(args.out, "prep"))
    img_dir = ensure_dir(os.path.join(out, "images"))
    side = cfg["crop_side"]
    radius = cfg["target_sclera_radius"]

    def process(rec):
        img = raster.load_image(os.path.join(src_root, rec.image_path))
        rec.annotation.check_in_bounds(img.shape[1], img.shape[0])
        result = dataset.preprocess(img, rec.annotation, radius, side)
        if result is None:
            return rec, None
        cropped, ann = result
        return rec, (cropped, ann)

    results = _pmap(process, records, cfg["jobs"])
    kept, discarded = [], []
    for rec, payload in results:
        if payload is None:
            discarded.append(rec)
            continue
        cropped, ann = payload
        name = os.path.basename(rec.image_path)
        raster.write_pgm(os.path.join(img_dir, name), cropped)
        kept.append(dataset.ManifestRecord(
            image_path=os.path.join("images", name),
            subject_id=rec.subject_id, session=rec.session, annotation=ann))

    manifest = os.path.join(out, "manifest.csv")
    dataset.save_manifest(manifest, kept)
    sidecar = os.path.join(out, "discarded.csv")
    with open(sidecar, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "subject", "session", "reason"])
        for rec in discarded:
            writer.writerow([rec.image_path, rec.subject_id, rec.session,
                             "crop-out-of-bounds"])

    outputs = [manifest, sidecar] + [
        os.path.join(img_dir, os.path.basename(r.image_path)) for r in kept]
    write_stage_meta(out, "prep", cfg, outputs, time.perf_counter() - t0,
                     extra={"kept": len(kept), "discarded": len(discarded),
                            "crop_side": side, "target_sclera_radius": radius})
    print(f"prep: kept {len(kept)}, discarded {len(discarded)} -> {out}")
    return 0


def _load_prep(cfg, out_root):
    prep_dir = os.path.join(out_root, "prep")
    check_stage(prep_dir, "prep")
    records = dataset.load_manifest(os.path.join(prep_dir, "manifest.csv"))
    return prep_dir, records


def cmd_degrade(cfg, args) -> int:
    t0 = time.perf_counter()
    prep_dir, records = _load_prep(cfg, args.out)
    records = target_records(cfg, records)
    if not records:
        raise CliError(EXIT_CONFIG, "no target records left after the subject split")
    label = args.factor
    lr_size = factor_size(cfg, label)
    sigma = degrade_sigma(cfg, cfg["crop_side"], lr_size)

    out = ensure_dir(os.path.join(args.out, "lr", factor_slug(label)))
    lr_dir = ensure_dir(os.path.join(out, "lr"))
    base_dir = ensure_dir(os.path.join(out, "baseline"))

    def process(rec):
        img = raster.load_image(os.path.join(prep_dir, rec.image_path))
        lr, baseline = dataset.simulate_lr(img, lr_size[0], lr_size[1], sigma)
        name = os.path.basename(rec.image_path)
        raster.write_pgm(os.path.join(lr_dir, name), lr)
        raster.write_pgm(os.path.join(base_dir, name), baseline)
        return name

    names = _pmap(process, records, cfg["jobs"])
    outputs = [os.path.join(lr_dir, n) for n in names]
    outputs += [os.path.join(base_dir, n) for n in names]
    write_stage_meta(out, "degrade", cfg, outputs, time.perf_counter() - t0,
                     extra={"factor": label, "lr_size": list(lr_size),
                            "sigma": sigma, "records": len(names)})
    print(f"degrade[{label}]: {len(names)} images at {lr_size[0]}x{lr_size[1]} "
          f"(sigma {sigma:.3f}) -> {out}")
    return 0


def _resolve_method(cfg, out_root, label, lr_size, prep_dir, prep_records):
    """Turn the method string into (UpscalerSpec, model, method_slug)."""
    method = cfg["method"]
    side = cfg["crop_side"]
    if method in ("bilinear", "bicubic"):
        return sr.UpscalerSpec(name=method, kind=method), None, method
    if method == "eigenpatch":
        model_dir = cfg["model_dir"] or os.path.join(out_root, "models")
        ensure_dir(model_dir)
        model_path = os.path.join(model_dir, f"eigenpatch_{factor_slug(label)}.npz")
        prep_tag = f"side={side},radius={cfg['target_sclera_radius']}"
        if os.path.exists(model_path):
            model = eigenpatch.load_model(model_path)
            if model.prep_tag != prep_tag:
                raise CliError(EXIT_CONFIG,
                               f"model {model_path} was trained under different "
                               f"preprocessing ({model.prep_tag!r} != {prep_tag!r})")
            if (model.lr_w, model.lr_h) != lr_size:
                raise CliError(EXIT_CONFIG,
                               f"model {model_path} trained for LR "
                               f"{model.lr_w}x{model.lr_h}, need {lr_size}")
        else:
            train_recs, _ = dataset.split_by_subject(prep_records, cfg["train_subjects"])
            if not train_recs:
                raise CliError(EXIT_CONFIG,
                               "eigenpatch training needs train_subjects > 0")
            sigma = degrade_sigma(cfg, side, lr_size)
            hr_images = [raster.load_image(os.path.join(prep_dir, r.image_path))
                         for r in train_recs]
            manifest_sha = file_sha(os.path.join(prep_dir, "manifest.csv"))
            model = eigenpatch.train(hr_images, lr_size[0], lr_size[1], sigma,
                                     provenance=manifest_sha, prep_tag=prep_tag)
            eigenpatch.save_model(model_path, model)
        spec = sr.UpscalerSpec(name="eigenpatch", kind="eigenpatch",
                               model_path=model_path)
        return spec, model, "eigenpatch"
    if method.startswith("backend:"):
        name = method.split(":", 1)[1]
        entry = cfg["backends"].get(name)
        if not entry or "command" not in entry:
            raise CliError(EXIT_CONFIG,
                           f"backend {name!r} not configured under config['backends']")
        exchange = entry.get("exchange_dir") or os.environ.get(sr.EXCHANGE_ENV) \
            or os.path.join(out_root, "exchange", name)
        spec = sr.UpscalerSpec(name=name, kind="external",
                               backend_command=entry["command"],
                               exchange_dir=exchange)
        return spec, None, f"backend-{name}"
    raise CliError(EXIT_CONFIG, f"unknown method {method!r}")


def _method_dir_name(cfg, method_slug):
    return method_slug + ("-rp" if cfg["reproject"] else "")


def cmd_sr(cfg, args) -> int:
    t0 = time.perf_counter()
    prep_dir, prep_records = _load_prep(cfg, args.out)
    records = target_records(cfg, prep_records)
    label = args.factor
    lr_size = factor_size(cfg, label)
    lr_stage = os.path.join(args.out, "lr", factor_slug(label))
    check_stage(lr_stage, "degrade")

    spec, model, method_slug = _resolve_method(
        cfg, args.out, label, lr_size, prep_dir, prep_records)
    method_name = _method_dir_name(cfg, method_slug)
    side = cfg["crop_side"]
    sigma = degrade_sigma(cfg, side, lr_size)
    rp_cfg = reproject_mod.ReprojectConfig(
        lr_w=lr_size[0], lr_h=lr_size[1], sigma=sigma,
        tau=cfg["tau"], tol=cfg["reproject_tol"],
        max_iter=cfg["reproject_max_iter"])

    out = ensure_dir(os.path.join(args.out, "sr", method_name, factor_slug(label)))
    img_dir = ensure_dir(os.path.join(out, "images"))

    def process(rec):
        name = os.path.basename(rec.image_path)
        lr = raster.read_pgm(os.path.join(lr_stage, "lr", name))
        try:
            img, passes = sr.super_resolve(lr, side, side, spec, model=model)
        except sr.BackendError as exc:
            raise CliError(EXIT_BACKEND, str(exc))
        iters = 0
        if cfg["reproject"]:
            img, iters, _ = reproject_mod.reproject(img, lr, rp_cfg)
        raster.write_pgm(os.path.join(img_dir, name), img)
        return name, passes, iters

    results = _pmap(process, records, cfg["jobs"])
    outputs = [os.path.join(img_dir, name) for name, _, _ in results]
    write_stage_meta(out, "sr", cfg, outputs, time.perf_counter() - t0,
                     extra={"factor": label, "method": method_name,
                            "passes": [p for _, p, _ in results],
                            "reproject_iterations": [i for _, _, i in results],
                            "tau": cfg["tau"], "tol": cfg["reproject_tol"]})
    print(f"sr[{method_name}, {label}]: {len(results)} images -> {out}")
    return 0


def _rewrite_csv_rows(path, header, key_cols, new_rows):
    """Replace rows matching the new keys, keep others, rewrite sorted."""
    rows = {}
    if os.path.exists(path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            old_header = next(reader, None)
            if old_header == header:
                for row in reader:
                    rows[tuple(row[i] for i in key_cols)] = row
    for row in new_rows:
        rows[tuple(row[i] for i in key_cols)] = row
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for key in sorted(rows):
            writer.writerow(rows[key])


def cmd_quality(cfg, args) -> int:
    t0 = time.perf_counter()
    prep_dir, prep_records = _load_prep(cfg, args.out)
    records = target_records(cfg, prep_records)
    label = args.factor
    spec_method = _method_dir_name(cfg, _method_slug_only(cfg))
    sr_dir = os.path.join(args.out, "sr", spec_method, factor_slug(label))
    check_stage(sr_dir, "sr")

    def process(rec):
        name = os.path.basename(rec.image_path)
        ref = raster.load_image(os.path.join(prep_dir, rec.image_path))
        test = raster.read_pgm(os.path.join(sr_dir, "images", name))
        full, iris = quality.region_report(ref, test, rec.annotation)
        return name, full, iris

    results = _pmap(process, records, cfg["jobs"])
    out = ensure_dir(os.path.join(args.out, "quality"))

    detail_path = os.path.join(
        out, f"detail_{spec_method}_{factor_slug(label)}.csv")
    with open(detail_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "region", "psnr", "ssim", "fsim"])
        for name, full, iris in results:
            for rep in (full, iris):
                writer.writerow([name, rep.region,
                                 f"{quality.psnr_for_table(rep.psnr):.6f}",
                                 f"{rep.ssim:.6f}", f"{rep.fsim:.6f}"])

    summary_rows = []
    for region_idx, region in ((1, "full"), (2, "iris")):
        reps = [r[region_idx] for r in results]
        mean_psnr = float(np.mean([quality.psnr_for_table(r.psnr) for r in reps]))
        mean_ssim = float(np.mean([r.ssim for r in reps]))
        mean_fsim = float(np.mean([r.fsim for r in reps]))
        summary_rows.append([spec_method, label, region,
                             f"{mean_psnr:.6f}", f"{mean_ssim:.6f}",
                             f"{mean_fsim:.6f}"])
        line = (f"quality[{spec_method}, {label}, {region}]: "
                f"psnr {mean_psnr:.2f} ssim {mean_ssim:.4f}")
        if args.show_fsim:
            line += f" fsim {mean_fsim:.4f}"
        print(line)

    table_path = os.path.join(out, "quality.csv")
    _rewrite_csv_rows(table_path,
                      ["method", "factor", "region", "psnr", "ssim", "fsim"],
                      (0, 1, 2), summary_rows)
    write_stage_meta(out, f"quality_{spec_method}_{factor_slug(label)}", cfg,
                     [table_path, detail_path], time.perf_counter() - t0)
    return 0


def _method_slug_only(cfg):
    method = cfg["method"]
    if method.startswith("backend:"):
        return "backend-" + method.split(":", 1)[1]
    return method


def cmd_match(cfg, args) -> int:
    t0 = time.perf_counter()
    prep_dir, prep_records = _load_prep(cfg, args.out)
    records = target_records(cfg, prep_records)
    label = args.factor
    method_name = _method_dir_name(cfg, _method_slug_only(cfg))
    sr_dir = os.path.join(args.out, "sr", method_name, factor_slug(label))
    check_stage(sr_dir, "sr")
    comparators = [c for c in cfg["comparators"] if c != "fused"]
    if not comparators:
        raise CliError(EXIT_CONFIG, "no raw comparators selected")

    out = ensure_dir(os.path.join(args.out, "scores", method_name,
                                  factor_slug(label)))
    tpl_dir = ensure_dir(os.path.join(out, "templates"))
    feat_dir = ensure_dir(os.path.join(out, "features"))

    def extract(rec):
        name = os.path.basename(rec.image_path)
        img = raster.read_pgm(os.path.join(sr_dir, "images", name))
        written = []
        if "lg" in comparators:
            path = os.path.join(tpl_dir, name + ".irt")
            iriscode.save_template(
                path, iriscode.encode(iriscode.unwrap(img, rec.annotation)))
            written.append(path)
        if "sift" in comparators:
            kps, desc = siftmatch.detect_describe(
                img, annulus=siftmatch.iris_annulus(rec.annotation))
            path = os.path.join(feat_dir, name + ".npz")
            siftmatch.save_features(path, kps, desc)
            written.append(path)
        return name, written

    extracted = _pmap(extract, records, cfg["jobs"])
    feature_files = [p for _, written in extracted for p in written]

    # the batch matcher works from the serialized template/feature artifacts
    features = {}
    for name, _written in extracted:
        feats = {}
        if "lg" in comparators:
            feats["lg"] = iriscode.load_template(
                os.path.join(tpl_dir, name + ".irt"))
        if "sift" in comparators:
            _, feats["sift"] = siftmatch.load_features(
                os.path.join(feat_dir, name + ".npz"))
        features[name] = feats
    ids = [(rec.subject_id, os.path.basename(rec.image_path)) for rec in records]
    genuine, impostor = fusion_eval.make_trials(ids)
    pairs = [(p, g, fusion_eval.GENUINE) for p, g in genuine]
    pairs += [(p, g, fusion_eval.IMPOSTOR) for p, g in impostor]

    outputs = list(feature_files)
    for comp in comparators:
        def score(pair):
            probe, gallery, _ = pair
            if comp == "lg":
                return iriscode.hamming(features[probe]["lg"],
                                        features[gallery]["lg"])
            return siftmatch.match_score(features[probe]["sift"],
                                         features[gallery]["sift"])

        values = _pmap(score, pairs, cfg["jobs"])
        path = os.path.join(out, f"{comp}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["probe", "gallery", "score", "comparator"])
            for (probe, gallery, _), value in zip(pairs, values):
                writer.writerow([probe, gallery, repr(value), comp.upper()])
        outputs.append(path)

    labels_path = os.path.join(out, "labels.csv")
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe", "gallery", "label"])
        for probe, gallery, lab in pairs:
            writer.writerow([probe, gallery, lab])
    outputs.append(labels_path)

    write_stage_meta(out, "match", cfg, outputs, time.perf_counter() - t0,
                     extra={"factor": label, "method": method_name,
                            "genuine": len(genuine), "impostor": len(impostor)})
    print(f"match[{method_name}, {label}]: {len(genuine)} genuine / "
          f"{len(impostor)} impostor pairs -> {out}")
    return 0


POLARITY = {"lg": iriscode.SCORE_POLARITY, "sift": siftmatch.SCORE_POLARITY}


def _read_scores(path):
    scores = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for probe, gallery, value, _comp in reader:
            scores[(probe, gallery)] = float(value)
    return scores


def cmd_eval(cfg, args) -> int:
    t0 = time.perf_counter()
    scores_root = os.path.join(args.out, "scores")
    if not os.path.isdir(scores_root):
        raise CliError(EXIT_MISSING_INPUT, f"no scores directory at {scores_root}")
    eer_rows = []
    roc_outputs = []
    out = ensure_dir(os.path.join(args.out, "eval"))
    stage_meta = {}

    for method_name in sorted(os.listdir(scores_root)):
        for slug in sorted(os.listdir(os.path.join(scores_root, method_name))):
            score_dir = os.path.join(scores_root, method_name, slug)
            if not os.path.isdir(score_dir):
                continue
            check_stage(score_dir, "match")
            label = slug.replace("_", "/")
            with open(os.path.join(score_dir, "labels.csv"), newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                pair_labels = [(p, g, lab) for p, g, lab in reader]

            comp_names = [c for c in cfg["comparators"] if c != "fused"]
            comp_scores = {}
            for comp in comp_names:
                path = os.path.join(score_dir, f"{comp}.csv")
                if not os.path.exists(path):
                    raise CliError(EXIT_MISSING_INPUT,
                                   f"missing score file {path} (rerun match)")
                comp_scores[comp] = _read_scores(path)

            trials = []
            for probe, gallery, lab in pair_labels:
                vec = tuple(comp_scores[c][(probe, gallery)] for c in comp_names)
                trials.append(fusion_eval.Trial(probe, gallery, vec, lab))

            for idx, comp in enumerate(comp_names):
                gen = [t.scores[idx] for t in trials if t.label == fusion_eval.GENUINE]
                imp = [t.scores[idx] for t in trials if t.label == fusion_eval.IMPOSTOR]
                rate, roc = fusion_eval.eer(gen, imp, POLARITY[comp])
                eer_rows.append([method_name, label, comp.upper(), f"{rate:.6f}"])
                roc_outputs.append(_write_roc(out, method_name, slug, comp, roc))

            if "fused" in cfg["comparators"] and len(comp_names) >= 1:
                if cfg["fusion_split"]:
                    train_set = trials[0::2]
                    eval_set = trials[1::2]
                else:
                    train_set = eval_set = trials
                model = fusion_eval.train_fusion(
                    train_set, polarities=[POLARITY[c] for c in comp_names])
                fused = fusion_eval.fuse_scores(model, eval_set)
                gen = [t.fused for t in fused if t.label == fusion_eval.GENUINE]
                imp = [t.fused for t in fused if t.label == fusion_eval.IMPOSTOR]
                rate, roc = fusion_eval.eer(gen, imp, "genuine_high")
                eer_rows.append([method_name, label, "FUSED", f"{rate:.6f}"])
                roc_outputs.append(_write_roc(out, method_name, slug, "fused", roc))
            stage_meta[f"{method_name}/{slug}"] = {
                "trials": len(trials),
                "genuine": sum(t.label == fusion_eval.GENUINE for t in trials),
                "impostor": sum(t.label == fusion_eval.IMPOSTOR for t in trials),
            }

    if not eer_rows:
        raise CliError(EXIT_MISSING_INPUT, "no score sets found to evaluate")

    eer_path = os.path.join(out, "eer.csv")
    _rewrite_csv_rows(eer_path, ["method", "factor", "comparator", "eer"],
                      (0, 1, 2), eer_rows)

    # gather the quality table next to the EER table when it exists
    extra_outputs = []
    quality_table = os.path.join(args.out, "quality", "quality.csv")
    if os.path.exists(quality_table):
        eval_quality = os.path.join(out, "quality.csv")
        with open(quality_table, "rb") as src, open(eval_quality, "wb") as dst:
            dst.write(src.read())
        extra_outputs.append(eval_quality)

    summary = {
        "config_hash": config_hash(cfg),
        "versions": {
            "iris-sr": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "stage_timings": _collect_timings(args.out),
        "trial_counts": stage_meta,
    }
    summary_path = os.path.join(out, "run_summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    write_stage_meta(out, "eval", cfg,
                     [eer_path, summary_path] + extra_outputs + roc_outputs,
                     time.perf_counter() - t0)
    for row in eer_rows:
        print(f"eer[{row[0]}, {row[1]}, {row[2]}]: {row[3]}")
    return 0


def _write_roc(out_dir, method, slug, comp, roc) -> str:
    path = os.path.join(out_dir, f"roc_{method}_{slug}_{comp}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "far", "frr"])
        for t, fa, fr in zip(roc.thresholds, roc.far, roc.frr):
            writer.writerow([repr(float(t)), f"{fa:.6f}", f"{fr:.6f}"])
    return path


def _collect_timings(out_root) -> dict:
    timings = {}
    for dirpath, _dirnames, filenames in os.walk(out_root):
        for name in sorted(filenames):
            if name.startswith("stage_") and name.endswith(".json"):
                with open(os.path.join(dirpath, name)) as fh:
                    meta = json.load(fh)
                rel = os.path.relpath(os.path.join(dirpath, name), out_root)
                timings[rel] = meta.get("elapsed_seconds")
    return timings


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irissr",
        description="Iris super-resolution evaluation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, factor=False):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", required=True, help="pipeline output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker parallelism (outputs are identical for any N)")
        if factor:
            p.add_argument("--factor", required=True,
                           help="factor label from the config (e.g. 1/16)")

    p = sub.add_parser("synth", help="generate the synthetic iris corpus")
    common(p)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--sessions", type=int, default=None)

    p = sub.add_parser("prep", help="sclera normalization + pupil-centered crop")
    common(p)
    p.add_argument("--manifest", help="external manifest CSV (default: synth stage)")

    p = sub.add_parser("degrade", help="simulate LR images and bicubic baselines")
    common(p, factor=True)

    p = sub.add_parser("sr", help="reconstruct LR images with the chosen method")
    common(p, factor=True)
    p.add_argument("--method",
                   help="bilinear | bicubic | eigenpatch | backend:<name>")
    p.add_argument("--reproject", action="store_true",
                   help="apply iterative image re-projection after SR")
    p.add_argument("--tau", type=float, default=None, help="re-projection step size")
    p.add_argument("--reproject-tol", dest="reproject_tol", type=float, default=None)
    p.add_argument("--reproject-max-iter", dest="reproject_max_iter", type=int,
                   default=None)

    p = sub.add_parser("quality", help="PSNR/SSIM/FSIM on full image and iris region")
    common(p, factor=True)
    p.add_argument("--method", help="method whose SR outputs to grade")
    p.add_argument("--reproject", action="store_true",
                   help="grade the re-projected variant")
    p.add_argument("--show-fsim", action="store_true",
                   help="also print FSIM (always stored in the CSV)")

    p = sub.add_parser("match", help="comparator scores for all trial pairs")
    common(p, factor=True)
    p.add_argument("--method", help="method whose SR outputs to match")
    p.add_argument("--reproject", action="store_true")
    p.add_argument("--comparators", help="comma list from {lg,sift,fused}")

    p = sub.add_parser("eval", help="EERs, ROC exports and the run summary")
    common(p)
    p.add_argument("--comparators", help="comma list from {lg,sift,fused}")
    p.add_argument("--fusion-split", dest="fusion_split", action="store_true",
                   help="train fusion on a disjoint half of the trials")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "degrade": cmd_degrade,
    "sr": cmd_sr,
    "quality": cmd_quality,
    "match": cmd_match,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"irissr {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (dataset.DatasetError, raster.RasterError) as exc:
        print(f"irissr {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
