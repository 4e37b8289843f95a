"""Experiment orchestration: staged artifacts on disk with checksummed
manifests, deterministic seeds, artifact caching, and multi-seed aggregation.

Every stage writes its outputs plus a manifest recording the stage config and
the checksums of its inputs and outputs. A stage is skipped (cache hit) when
its manifest matches the current config and all input/output checksums still
agree; downstream stages refuse to run against inputs whose checksums do not
match the upstream manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from .attributes import (compute_attributes, extract_latents,
                         load_attributes_csv, save_attributes_csv, strip)
from .classifier import (ConstantClassifier, EvalReport, SvmModel, evaluate,
                         train_svm)
from .cvae import CvaeConfig, CvaeModel, PseudoDataset, generate_pseudo, train_cvae
from .ingest import (Dataset, Normalizer, apply_normalizer, build_dataset,
                     fit_normalizer, load_dataset, make_partition,
                     parse_packet_csv, save_dataset, split_indices)
from .sane import SaneConfig, SaneModel, train_sane
from .synth import generate_csv, load_profiles, preset_profiles

logger = logging.getLogger("zest.pipeline")

BASELINE_NAMES = ("vae-k", "seqcr", "seqcs", "deft")


class StageError(RuntimeError):
    """Raised with the failing stage's name for CLI exit reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment directory."""

    outdir: str
    source: dict = field(default_factory=lambda: {"preset": "separable-12"})
    n: int = 200
    num_unseen: int = 2
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ratios: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    sane: dict = field(default_factory=dict)     # SaneConfig overrides
    cvae: dict = field(default_factory=dict)     # CvaeConfig overrides
    svm: dict = field(default_factory=lambda: {"c_reg": 1.0, "epochs": 300,
                                               "lr": 1.0})
    pseudo_k: int = 500
    baselines: list = field(default_factory=lambda: list(BASELINE_NAMES))

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds list must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def sane_config(self, num_classes: int, seed: int) -> SaneConfig:
        # n, num_classes, and seed come from the experiment, not the overrides
        params = dict(self.sane)
        params.update(n=self.n, num_classes=num_classes, seed=seed)
        return SaneConfig(**params)

    def cvae_config(self, seed: int) -> CvaeConfig:
        sane_cfg = {"M": 20, "N": 3} | self.sane
        params = dict(self.cvae)
        params.update(input_dim=sane_cfg["M"], cond_dim=sane_cfg["N"],
                      seed=seed)
        return CvaeConfig(**params)


def resolve_config(outdir: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Load outdir/config.json if present, apply overrides, persist."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "config.json"
    if path.exists():
        config = ExperimentConfig.load(path)
        config.outdir = str(outdir)
    else:
        config = ExperimentConfig(outdir=str(outdir))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("sane", "cvae", "svm"):
            getattr(config, key).update(value)
        else:
            setattr(config, key, value)
    config.save(path)
    return config


# ---------------------------------------------------------------------------
# locking, checksums, stage manifests
# ---------------------------------------------------------------------------

class RunLock:
    """One command at a time per output directory."""

    def __init__(self, outdir: str | Path):
        self.path = Path(outdir) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError(
                "lock",
                f"{self.path} exists; another run is in progress "
                f"(remove the file if it is stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


class StageRunner:
    """Runs one named stage with caching and checksum validation."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _manifest_path(self, stage: str) -> Path:
        return self.root / f"{stage}.manifest.json"

    def require_input(self, stage: str, producer: str, path: Path) -> Path:
        """Validate that `path` exists and matches the producer's manifest."""
        manifest_path = self._manifest_path(producer)
        if not manifest_path.exists() or not path.exists():
            raise StageError(
                stage, f"missing upstream artifact {path.name}; "
                       f"re-run stage '{producer}'")
        manifest = read_json(manifest_path)
        recorded = manifest["outputs"].get(path.name)
        if recorded is None or sha256_file(path) != recorded:
            raise StageError(
                stage, f"upstream artifact {path.name} does not match the "
                       f"manifest of stage '{producer}'; re-run '{producer}'")
        return path

    def run(self, stage: str, config: dict, inputs: list[Path],
            outputs: list[Path], fn) -> bool:
        """Execute fn() unless the stage manifest shows a valid cache hit.
        Returns True when the stage actually ran."""
        manifest_path = self._manifest_path(stage)
        input_sums = {p.name: sha256_file(p) for p in inputs}
        if manifest_path.exists():
            manifest = read_json(manifest_path)
            if (manifest.get("config") == json.loads(
                    json.dumps(config, default=_json_default, sort_keys=True))
                    and manifest.get("inputs") == input_sums
                    and all(Path(self.root / name).exists()
                            and sha256_file(self.root / name) == digest
                            for name, digest in manifest["outputs"].items())):
                logger.info("stage %s: cache hit", stage)
                return False
        logger.info("stage %s: running", stage)
        fn()
        missing = [p for p in outputs if not p.exists()]
        if missing:
            raise StageError(stage, f"stage did not produce {missing}")
        manifest = {
            "stage": stage,
            "config": json.loads(json.dumps(config, default=_json_default,
                                            sort_keys=True)),
            "inputs": input_sums,
            "outputs": {p.name: sha256_file(p) for p in outputs},
        }
        write_json(manifest_path, manifest)
        return True


# ---------------------------------------------------------------------------
# path layout
# ---------------------------------------------------------------------------

def data_dir(config: ExperimentConfig) -> Path:
    return Path(config.outdir) / "data"


def run_dir(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.outdir) / "runs" / f"seed-{seed}"


# ---------------------------------------------------------------------------
# data stage
# ---------------------------------------------------------------------------

def stage_ingest(config: ExperimentConfig) -> Dataset:
    """Build the segmented raw-feature dataset (synthesizing traffic first
    when the source is a preset)."""
    ddir = data_dir(config)
    ddir.mkdir(parents=True, exist_ok=True)
    runner = StageRunner(ddir)
    source = dict(config.source)

    if "preset" in source or "profiles" in source:
        csv_path = ddir / "traffic.csv"

        def synth_fn():
            if "profiles" in source:
                profiles = load_profiles(source["profiles"])
            else:
                profiles = preset_profiles(
                    source["preset"], sessions=source.get("sessions"),
                    packets_per_session=source.get("packets_per_session",
                                                   config.n))
            generate_csv(profiles, seed=source.get("seed", 0), path=csv_path)

        runner.run("synth", {"source": source}, [], [csv_path], synth_fn)
    elif "csv" in source:
        csv_path = Path(source["csv"])
        if not csv_path.exists():
            raise StageError("ingest", f"csv source not found: {csv_path}")
    else:
        raise StageError("ingest", f"unusable source spec: {source}")

    npz_path = ddir / "dataset.npz"
    manifest_path = ddir / "dataset.json"

    def ingest_fn():
        records = parse_packet_csv(csv_path)
        dataset = build_dataset(records, n=config.n)
        if not dataset.points:
            raise StageError("ingest", "no sequences after segmentation")
        save_dataset(dataset, npz_path, manifest_path)

    runner.run("ingest", {"n": config.n, "source": source},
               [csv_path], [npz_path, manifest_path], ingest_fn)
    return load_dataset(npz_path, manifest_path)


def load_ingested(config: ExperimentConfig, stage: str) -> Dataset:
    ddir = data_dir(config)
    runner = StageRunner(ddir)
    npz = runner.require_input(stage, "ingest", ddir / "dataset.npz")
    manifest = runner.require_input(stage, "ingest", ddir / "dataset.json")
    return load_dataset(npz, manifest)


# ---------------------------------------------------------------------------
# per-seed stages
# ---------------------------------------------------------------------------

def stage_partition(config: ExperimentConfig, seed: int) -> dict:
    dataset = load_ingested(config, "partition")
    rdir = run_dir(config, seed)
    rdir.mkdir(parents=True, exist_ok=True)
    runner = StageRunner(rdir)
    out = rdir / "partition.json"
    ddir = data_dir(config)

    def fn():
        devices = dataset.device_ids
        if config.num_unseen > 0:
            part = make_partition(devices, config.num_unseen, seed)
            seen, unseen = sorted(part.seen), sorted(part.unseen)
        else:
            seen, unseen = list(range(len(devices))), []
        splits = split_indices([p.device_id for p in dataset.points],
                               tuple(config.ratios), seed)
        write_json(out, {"seed": seed, "seen": seen, "unseen": unseen,
                         "splits": splits})

    runner.run("partition",
               {"seed": seed, "num_unseen": config.num_unseen,
                "ratios": config.ratios},
               [ddir / "dataset.npz"], [out], fn)
    return read_json(out)


def _normalized_points(dataset: Dataset, partition: dict,
                       normalizer: Normalizer) -> dict:
    """Normalized DataPoints per split."""
    return {
        split: apply_normalizer(normalizer,
                                [dataset.points[i] for i in indices])
        for split, indices in partition["splits"].items()
    }


def stage_train_sane(config: ExperimentConfig, seed: int) -> None:
    dataset = load_ingested(config, "train-sane")
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("train-sane", "partition",
                                     rdir / "partition.json")
    partition = read_json(part_path)
    norm_path = rdir / "normalizer.json"
    ckpt_path = rdir / "sane.ckpt"
    log_path = rdir / "sane_log.csv"
    seen = partition["seen"]
    sane_cfg = config.sane_config(num_classes=len(seen), seed=seed)

    def fn():
        train_idx = [i for i in partition["splits"]["train"]
                     if dataset.points[i].label in seen]
        val_idx = [i for i in partition["splits"]["val"]
                   if dataset.points[i].label in seen]
        norm = fit_normalizer([dataset.points[i] for i in train_idx])
        write_json(norm_path, norm.to_dict())
        local = {label: i for i, label in enumerate(seen)}

        def localized(indices):
            points = apply_normalizer(norm, [dataset.points[i]
                                             for i in indices])
            for p in points:
                p.label = local[p.label]
            return points

        model, _ = train_sane(localized(train_idx), localized(val_idx),
                              sane_cfg, log_path=log_path)
        model.save(ckpt_path)

    runner.run("train-sane", {"sane": asdict(sane_cfg)},
               [data_dir(config) / "dataset.npz", part_path],
               [norm_path, ckpt_path, log_path], fn)


def stage_extract_attrs(config: ExperimentConfig, seed: int) -> None:
    dataset = load_ingested(config, "extract-attrs")
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("extract-attrs", "partition",
                                     rdir / "partition.json")
    ckpt_path = runner.require_input("extract-attrs", "train-sane",
                                     rdir / "sane.ckpt")
    norm_path = runner.require_input("extract-attrs", "train-sane",
                                     rdir / "normalizer.json")
    partition = read_json(part_path)
    latents_path = rdir / "latents.npz"
    attrs_path = rdir / "attributes.csv"

    def fn():
        model = SaneModel.load(ckpt_path)
        norm = Normalizer.from_dict(read_json(norm_path))
        _, c_l, c_lam = strip(model)
        points = apply_normalizer(norm, dataset.points)
        x = np.stack([p.features for p in points])
        out = model.predict_arrays(x)
        np.savez(latents_path, l=out["l"], lam=out["lam"],
                 labels=np.array([p.label for p in dataset.points],
                                 dtype=np.int64))

        # attribute source: train split for seen devices, train+val for
        # unseen (test data never contributes)
        seen = set(partition["seen"])
        splits = partition["splits"]
        attr_idx: dict[str, list[int]] = {}
        for split in ("train", "val"):
            for i in splits[split]:
                p = dataset.points[i]
                if split == "val" and p.label in seen:
                    continue
                attr_idx.setdefault(p.device_id, []).append(i)
        latent_sets = []
        for dev in sorted(attr_idx):
            pts = [points[i] for i in attr_idx[dev]]
            latent_sets.append(extract_latents(c_l, c_lam, pts,
                                               device_id=dev))
        attrs = compute_attributes(latent_sets)
        save_attributes_csv(attrs, attrs_path)

    runner.run("extract-attrs", {"N": config.sane.get("N", 3)},
               [ckpt_path, norm_path, part_path],
               [latents_path, attrs_path], fn)


def _load_latents(rdir: Path) -> dict:
    data = np.load(rdir / "latents.npz")
    return {"l": data["l"], "lam": data["lam"], "labels": data["labels"]}


def _class_attributes(dataset: Dataset, attrs_path: Path) -> dict[int, np.ndarray]:
    attrs = load_attributes_csv(attrs_path)
    return {dataset.class_map[dev]: attrs[dev].a for dev in attrs}


def stage_train_cvae(config: ExperimentConfig, seed: int) -> None:
    dataset = load_ingested(config, "train-cvae")
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("train-cvae", "partition",
                                     rdir / "partition.json")
    latents_path = runner.require_input("train-cvae", "extract-attrs",
                                        rdir / "latents.npz")
    attrs_path = runner.require_input("train-cvae", "extract-attrs",
                                      rdir / "attributes.csv")
    partition = read_json(part_path)
    cvae_cfg = config.cvae_config(seed=seed)
    ckpt_path = rdir / "cvae.ckpt"

    def fn():
        latents = _load_latents(rdir)
        class_attrs = _class_attributes(dataset, attrs_path)
        seen = set(partition["seen"])
        train_idx = [i for i in partition["splits"]["train"]
                     if int(latents["labels"][i]) in seen]
        for i in train_idx:
            if int(latents["labels"][i]) not in class_attrs:
                raise StageError("train-cvae",
                                 f"missing attribute for seen class "
                                 f"{int(latents['labels'][i])}")
        x = latents["l"][train_idx]
        conds = np.stack([class_attrs[int(latents["labels"][i])]
                          for i in train_idx])
        model, _ = train_cvae(x, conds, cvae_cfg)
        model.save(ckpt_path)

    runner.run("train-cvae", {"cvae": asdict(cvae_cfg)},
               [latents_path, attrs_path, part_path], [ckpt_path], fn)


def stage_gen_pseudo(config: ExperimentConfig, seed: int) -> None:
    dataset = load_ingested(config, "gen-pseudo")
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    cvae_path = runner.require_input("gen-pseudo", "train-cvae",
                                     rdir / "cvae.ckpt")
    attrs_path = runner.require_input("gen-pseudo", "extract-attrs",
                                      rdir / "attributes.csv")
    pseudo_path = rdir / "pseudo.csv"
    pseudo_manifest = rdir / "pseudo.json"

    def fn():
        model = CvaeModel.load(cvae_path)
        class_attrs = _class_attributes(dataset, attrs_path)
        pseudo = generate_pseudo(model, class_attrs, k=config.pseudo_k,
                                 seed=seed)
        dim = pseudo.samples.shape[1]
        with open(pseudo_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"l_{i}" for i in range(dim)])
            for label, row in zip(pseudo.labels, pseudo.samples):
                writer.writerow([int(label)] + [f"{v:.8f}" for v in row])
        write_json(pseudo_manifest, {"k": config.pseudo_k, "seed": seed,
                                     "decoder_checksum": sha256_file(cvae_path)})

    runner.run("gen-pseudo", {"k": config.pseudo_k, "seed": seed},
               [cvae_path, attrs_path], [pseudo_path, pseudo_manifest], fn)


def load_pseudo_csv(path: str | Path) -> PseudoDataset:
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.unique(labels, return_counts=True)[1]
    return PseudoDataset(samples=np.asarray(rows, dtype=np.float32),
                         labels=labels, k=int(counts[0]))


def stage_train_clf(config: ExperimentConfig, seed: int) -> None:
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("train-clf", "partition",
                                     rdir / "partition.json")
    pseudo_path = runner.require_input("train-clf", "gen-pseudo",
                                       rdir / "pseudo.csv")
    partition = read_json(part_path)
    svm_cfg = dict(config.svm)
    zsl_path = rdir / "svm_zsl.json"
    gzsl_path = rdir / "svm_gzsl.json"

    def fn():
        pseudo = load_pseudo_csv(pseudo_path)
        unseen = partition["unseen"]

        def fit(p: PseudoDataset) -> dict:
            model = train_svm(p.samples, p.labels, c_reg=svm_cfg["c_reg"],
                              epochs=svm_cfg["epochs"], lr=svm_cfg["lr"],
                              seed=seed)
            return {"type": "svm", "model": model.to_dict()}

        write_json(gzsl_path, fit(pseudo))
        if len(unseen) == 1:
            # one unseen class: nothing to separate in the ZSL setting
            write_json(zsl_path, {"type": "constant",
                                  "classes": [unseen[0]]})
        else:
            write_json(zsl_path, fit(pseudo.for_classes(unseen)))

    runner.run("train-clf", {"svm": svm_cfg},
               [pseudo_path, part_path], [zsl_path, gzsl_path], fn)


def _load_classifier(path: Path):
    payload = read_json(path)
    if payload["type"] == "constant":
        return ConstantClassifier(classes=payload["classes"])
    return SvmModel.from_dict(payload["model"])


def stage_eval(config: ExperimentConfig, seed: int) -> dict[str, EvalReport]:
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("eval", "partition",
                                     rdir / "partition.json")
    latents_path = runner.require_input("eval", "extract-attrs",
                                        rdir / "latents.npz")
    zsl_path = runner.require_input("eval", "train-clf", rdir / "svm_zsl.json")
    gzsl_path = runner.require_input("eval", "train-clf",
                                     rdir / "svm_gzsl.json")
    partition = read_json(part_path)
    outputs = {name: rdir / f"report_{name}.json" for name in ("zsl", "gzsl")}
    table_path = rdir / "report.txt"

    def fn():
        latents = _load_latents(rdir)
        unseen = set(partition["unseen"])
        test_idx = partition["splits"]["test"]
        lines = []
        for setting, clf_path in (("zsl", zsl_path), ("gzsl", gzsl_path)):
            model = _load_classifier(clf_path)
            if setting == "zsl":
                idx = [i for i in test_idx
                       if int(latents["labels"][i]) in unseen]
            else:
                idx = list(test_idx)
            report = evaluate(setting, model, latents["l"][idx],
                              latents["labels"][idx],
                              extra={"method": "zest", "seed": seed})
            report.save_json(outputs[setting])
            lines.append(report.format_table())
        table_path.write_text("\n\n".join(lines) + "\n")

    runner.run("eval", {"svm": config.svm},
               [latents_path, zsl_path, gzsl_path, part_path],
               list(outputs.values()) + [table_path], fn)
    return {name: EvalReport.from_dict(read_json(path))
            for name, path in outputs.items()}


def stage_baseline(config: ExperimentConfig, seed: int,
                   name: str) -> dict[str, EvalReport]:
    if name not in BASELINE_NAMES:
        raise StageError("baseline",
                         f"unknown baseline {name!r}; have {BASELINE_NAMES}")
    dataset = load_ingested(config, "baseline")
    rdir = run_dir(config, seed)
    runner = StageRunner(rdir)
    part_path = runner.require_input("baseline", "partition",
                                     rdir / "partition.json")
    latents_path = runner.require_input("baseline", "extract-attrs",
                                        rdir / "latents.npz")
    attrs_path = runner.require_input("baseline", "extract-attrs",
                                      rdir / "attributes.csv")
    partition = read_json(part_path)
    out_path = rdir / f"baseline_{name}.json"

    def fn():
        latents = _load_latents(rdir)
        labels = latents["labels"]
        seen = set(partition["seen"])
        unseen = set(partition["unseen"])
        num_classes = len(seen) + len(unseen)
        splits = partition["splits"]
        # cluster-fit data mirrors the attribute source: train split for
        # seen devices, train+val for unseen
        fit_idx = [i for i in splits["train"]] + \
                  [i for i in splits["val"] if int(labels[i]) in unseen]
        test_idx = splits["test"]
        class_attrs = _class_attributes(dataset, attrs_path)
        if set(class_attrs) != set(range(num_classes)):
            raise StageError("baseline", "missing attribute for seeding")
        attr_seeds = np.stack([class_attrs[c] for c in range(num_classes)])

        reports = {}
        for setting in ("zsl", "gzsl"):
            if setting == "zsl":
                idx = [i for i in test_idx if int(labels[i]) in unseen]
            else:
                idx = list(test_idx)
            fit_labels = labels[fit_idx]
            test_labels = labels[idx]
            if name == "vae-k":
                report = bl.vae_k(latents["l"][fit_idx], fit_labels,
                                  latents["l"][idx], test_labels,
                                  num_classes, seed, setting=setting)
            elif name == "seqcr":
                report = bl.seqcr(latents["lam"][fit_idx], fit_labels,
                                  latents["lam"][idx], test_labels,
                                  num_classes, seed, setting=setting)
            elif name == "seqcs":
                report = bl.seqcs(latents["lam"][fit_idx], fit_labels,
                                  latents["lam"][idx], test_labels,
                                  attr_seeds, num_classes, seed,
                                  setting=setting)
            else:
                report = bl.deft(latents["lam"][fit_idx], fit_labels,
                                 latents["lam"][idx], test_labels,
                                 attr_seeds, num_classes, seed,
                                 setting=setting)
            report.extra["method"] = name
            reports[setting] = report
        write_json(out_path, {s: r.to_dict() for s, r in reports.items()})

    runner.run(f"baseline-{name}", {"name": name},
               [latents_path, attrs_path, part_path], [out_path], fn)
    payload = read_json(out_path)
    return {s: EvalReport.from_dict(d) for s, d in payload.items()}


# ---------------------------------------------------------------------------
# full pipeline and sweeps
# ---------------------------------------------------------------------------

def run_seed(config: ExperimentConfig, seed: int) -> dict:
    """All per-seed stages; returns {method: {setting: EvalReport}}."""
    stage_partition(config, seed)
    stage_train_sane(config, seed)
    stage_extract_attrs(config, seed)
    stage_train_cvae(config, seed)
    stage_gen_pseudo(config, seed)
    stage_train_clf(config, seed)
    results = {"zest": stage_eval(config, seed)}
    for name in config.baselines:
        results[name] = stage_baseline(config, seed, name)
    return results


def aggregate_reports(per_seed: list[dict]) -> list[dict]:
    """Mean and std accuracy per (method, setting) over seeds."""
    rows = []
    methods = list(per_seed[0])
    for method in methods:
        for setting in ("zsl", "gzsl"):
            accs = [res[method][setting].accuracy for res in per_seed]
            rows.append({
                "method": method,
                "setting": setting,
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs)),
                "num_seeds": len(accs),
                "accuracies": [float(a) for a in accs],
            })
    return rows


def write_aggregate(rows: list[dict], outdir: Path) -> None:
    csv_path = outdir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "setting", "mean_accuracy",
                         "std_accuracy", "num_seeds"])
        for row in rows:
            writer.writerow([row["method"], row["setting"],
                             f"{row['mean_accuracy']:.6f}",
                             f"{row['std_accuracy']:.6f}",
                             row["num_seeds"]])
    lines = [f"{'method':<10} {'setting':<6} {'mean':>8} {'std':>8}"]
    for row in rows:
        lines.append(f"{row['method']:<10} {row['setting']:<6} "
                     f"{row['mean_accuracy']:>8.4f} "
                     f"{row['std_accuracy']:>8.4f}")
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")


def run_pipeline(config: ExperimentConfig) -> list[dict]:
    """Ingest once, run every partition seed, aggregate."""
    stage_ingest(config)
    per_seed = [run_seed(config, seed) for seed in config.seeds]
    rows = aggregate_reports(per_seed)
    write_aggregate(rows, Path(config.outdir))
    return rows


SWEEP_PARAMS = {
    "attr-dim": ("sane", "N", int),
    "encoders": ("sane", "e", int),
    "heads": ("sane", "h", int),
    "unseen": (None, "num_unseen", int),
}


def run_sweep(config: ExperimentConfig, param: str,
              values: list) -> list[dict]:
    """Run the full pipeline once per parameter value in its own subdir."""
    if param not in SWEEP_PARAMS:
        raise StageError("sweep", f"unknown sweep parameter {param!r}; "
                                  f"have {sorted(SWEEP_PARAMS)}")
    section, key, cast = SWEEP_PARAMS[param]
    sweep_root = Path(config.outdir) / f"sweep-{param}"
    sweep_root.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for value in values:
        value = cast(value)
        sub = ExperimentConfig.from_dict(config.to_dict())
        sub.outdir = str(sweep_root / str(value))
        if section is None:
            setattr(sub, key, value)
        else:
            getattr(sub, section)[key] = value
        Path(sub.outdir).mkdir(parents=True, exist_ok=True)
        sub.save(Path(sub.outdir) / "config.json")
        rows = run_pipeline(sub)
        for row in rows:
            row["param"] = param
            row["value"] = value
            all_rows.append(row)
    csv_path = sweep_root / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", "method", "setting",
                         "mean_accuracy", "std_accuracy", "num_seeds"])
        for row in all_rows:
            writer.writerow([row["param"], row["value"], row["method"],
                             row["setting"], f"{row['mean_accuracy']:.6f}",
                             f"{row['std_accuracy']:.6f}", row["num_seeds"]])
    return all_rows
