"""Command-line harness exposing the pipeline stages and the experiment grid.

Config is a JSON file; environment variables TRIALFUSE_<KEY> override
top-level scalar keys. All randomness flows from the config seed, so two runs
with identical config bytes produce identical report bytes.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import metrics as metrics_mod
from . import __version__
from .embedding import (EMBED_DIM, CacheBackedEncoder, EmbeddingCache,
                        StubEncoder, check_cache_file, eligibility_vector,
                        split_eligibility, stub_encode, truncate_tokens,
                        ELIG_INCL_MODALITY, ELIG_EXCL_MODALITY)
from .fixtures import fixture_corpus
from .ontology import default_ontology_dir, load_ontology
from .schema import SchemaError, parse_record, read_jsonl, serialize_record, write_jsonl
from .smiles import SmilesError, canonical_smiles
from .smoe import (ALL_MODALITIES, GATE_ALL, GATE_DRUG_DISEASE, ModelConfig,
                   SMoEModel, init_model, load_checkpoint, save_checkpoint)
from .textualize import assemble_prompt, linearize, render_offline
from .training import (Sample, SplitSpec, TrainConfig, evaluate_auc,
                       stratified_split, train)
from .validate import SynonymTable, ValidatorConfig, validate_record

GATE_MODE_ALIASES = {"drug_disease": GATE_DRUG_DISEASE, "drug-disease": GATE_DRUG_DISEASE,
                     "all": GATE_ALL, "all_modalities": GATE_ALL}

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTS = 2


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    gate_mode: str = GATE_DRUG_DISEASE
    modalities: tuple[str, ...] = ALL_MODALITIES
    textualize: bool = True
    embed_dim: int = EMBED_DIM
    num_experts: int = 4
    top_k: int = 2
    expert_hidden: int = 256
    epochs: int = 6
    learning_rate: float = 1e-3
    batch_size: int = 32
    lambda_imp: float = 0.01
    patience: int = 20
    noisy_gating: bool = True

    def __post_init__(self):
        if not self.modalities:
            raise ValueError("modality subset must be nonempty")
        unknown = set(self.modalities) - set(ALL_MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        if self.gate_mode not in (GATE_DRUG_DISEASE, GATE_ALL):
            raise ValueError(f"gate_mode must be one of {sorted(GATE_MODE_ALIASES)}")

    def model_config(self) -> ModelConfig:
        # The model always carries the full seven-modality layout; a subset
        # run feeds zeros for the excluded modalities.
        return ModelConfig(
            modalities=ALL_MODALITIES,
            num_experts=self.num_experts, top_k=self.top_k,
            expert_hidden=self.expert_hidden, expert_out=self.embed_dim,
            embed_dim=self.embed_dim, gate_mode=self.gate_mode)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_imp=self.lambda_imp, learning_rate=self.learning_rate,
            batch_size=self.batch_size, max_epochs=self.epochs,
            seed=self.seed, patience=self.patience,
            noisy_gating=self.noisy_gating)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    for key in list(RunConfig.__dataclass_fields__):
        env = os.environ.get(f"TRIALFUSE_{key.upper()}")
        if env is not None:
            current = RunConfig.__dataclass_fields__[key]
            if current.type in ("int",):
                raw[key] = int(env)
            elif current.type in ("float",):
                raw[key] = float(env)
            elif current.type in ("bool",):
                raw[key] = env.lower() in ("1", "true", "yes")
            else:
                raw[key] = env
    raw.update(overrides or {})
    if "modalities" in raw:
        value = raw["modalities"]
        raw["modalities"] = tuple(value.split(",")) if isinstance(value, str) else tuple(value)
    if "gate_mode" in raw:
        raw["gate_mode"] = GATE_MODE_ALIASES.get(raw["gate_mode"], raw["gate_mode"])
    return RunConfig(**raw)


def config_json(config: RunConfig) -> dict:
    out = dataclasses.asdict(config)
    out["modalities"] = list(config.modalities)
    return out


# --- record -> sample encoding ----------------------------------------------

def record_texts(record, textualize_on: bool = True) -> dict[str, tuple[str, str]]:
    """Per-modality (encoder modality, text) pairs for one record. Criteria
    are handled separately through the per-sentence eligibility path."""
    texts: dict[str, tuple[str, str]] = {}
    if record.smiles:
        parts = []
        for s in record.smiles:
            try:
                parts.append(s.canonical or canonical_smiles(s.raw))
            except SmilesError:
                parts.append(s.raw)
        texts["smiles"] = ("molecular", "; ".join(parts))
    disease_terms = list(record.diseases) + [c.code for c in record.icd_codes]
    if disease_terms:
        texts["diseases"] = ("ontology", "; ".join(disease_terms))
    if textualize_on and record.brief_summary:
        texts["summarization"] = ("protocol", record.brief_summary)
    if textualize_on and record.text_description:
        texts["description"] = ("protocol", record.text_description)
    if record.enrollment is not None:
        texts["enrollment"] = ("protocol", str(record.enrollment))
    if record.drugs:
        texts["drugs"] = ("molecular", "; ".join(record.drugs))
    return texts


def build_sample(record, encoder, modalities=ALL_MODALITIES,
                 textualize_on: bool = True) -> Sample:
    texts = record_texts(record, textualize_on)
    inputs: dict[str, np.ndarray] = {}
    for m in modalities:
        if m == "criteria":
            if record.criteria:
                inputs[m] = eligibility_vector(record.criteria, encoder)
        elif m in texts:
            enc_modality, text = texts[m]
            inputs[m] = encoder.encode(enc_modality, truncate_tokens(enc_modality, text))
    label = record.label if record.label is not None else 0
    return Sample(record.nct_id, inputs, int(label), record.phase.lowest())


def encode_corpus(records, cache: EmbeddingCache) -> int:
    """Write stub-encoder vectors for every modality text (and per-sentence
    eligibility entries) into the cache. Returns the entry count."""
    dim = cache.dim
    for record in records:
        for enc_modality, text in record_texts(record).values():
            text = truncate_tokens(enc_modality, text)
            cache.put(enc_modality, text, stub_encode(enc_modality, text, dim))
        incl, excl = split_eligibility(record.criteria)
        for sentence in incl:
            cache.put(ELIG_INCL_MODALITY, sentence,
                      stub_encode(ELIG_INCL_MODALITY, sentence, dim))
        for sentence in excl:
            cache.put(ELIG_EXCL_MODALITY, sentence,
                      stub_encode(ELIG_EXCL_MODALITY, sentence, dim))
    return len(cache)


def split_fingerprint(*splits) -> str:
    h = hashlib.sha256()
    for split in splits:
        for s in split:
            h.update(s.sample_id.encode("utf-8"))
        h.update(b"|")
    return h.hexdigest()[:16]


# --- pipeline stages ---------------------------------------------------------

def stage_validate(rows, out_dir) -> tuple[list, list[dict], int]:
    ontology = load_ontology(default_ontology_dir())
    synonyms = SynonymTable.bundled()
    accepted, reports = [], []
    rejects = 0
    for row in rows:
        try:
            record = parse_record(row)
        except SchemaError as exc:
            rejects += 1
            reports.append({"record_id": str(row.get("nct_id", "?")),
                            "verdict": "reject",
                            "reason_codes": [f"parse:{exc}"], "checks": [],
                            "repairs": []})
            continue
        fixed, report = validate_record(record, ontology, synonyms, ValidatorConfig())
        reports.append(report.to_json())
        if fixed is None:
            rejects += 1
        else:
            accepted.append(fixed)
    write_jsonl(os.path.join(out_dir, "validation.jsonl"), reports)
    write_jsonl(os.path.join(out_dir, "accepted.jsonl"),
                [serialize_record(r) for r in accepted])
    return accepted, reports, rejects


def _canonical_entries(smiles):
    out = []
    for s in smiles:
        try:
            out.append(s if s.canonical == s.raw
                       else type(s)(raw=canonical_smiles(s.raw)))
        except SmilesError:
            out.append(s)
    return tuple(out)


def stage_textualize(records, out_dir):
    """Render narratives and canonicalize SMILES so the processed JSONL is a
    self-contained input for external encoders (canonical forms are the
    cache-key texts)."""
    out = []
    for record in records:
        pair = render_offline(record)
        out.append(record.replace(brief_summary=pair.brief_summary,
                                  text_description=pair.text_description,
                                  smiles=_canonical_entries(record.smiles)))
    write_jsonl(os.path.join(out_dir, "processed.jsonl"),
                [serialize_record(r) for r in out])
    return out


def stage_encode(records, out_dir, dim: int) -> str:
    path = os.path.join(out_dir, "cache.bin")
    if os.path.exists(path):
        os.remove(path)
    cache = EmbeddingCache(path, dim=dim)
    encode_corpus(records, cache)
    cache.save()
    return path


def stage_train(records, config: RunConfig, encoder, out_dir, tag: str = "run"):
    labeled = [r for r in records if r.label is not None]
    samples = [build_sample(r, encoder, config.modalities, config.textualize)
               for r in labeled]
    tr, va, te = stratified_split(samples, SplitSpec(seed=config.seed))
    model = init_model(config.model_config(), seed=config.seed)
    best, history = train(tr, va, model, config.train_config())
    save_checkpoint(best, os.path.join(out_dir, f"{tag}.ckpt"))
    with open(os.path.join(out_dir, f"{tag}_history.csv"), "w", newline="",
              encoding="utf-8") as fh:
        rows = [h.as_row() for h in history]
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return best, history, (tr, va, te)


def stage_eval(model: SMoEModel, splits, out_path: str | None = None,
               extra: dict | None = None) -> dict:
    tr, va, te = splits
    from .smoe import forward
    from .training import _stack_batch

    def scores_of(split):
        inputs, labels = _stack_batch(split, model.config.modalities)
        return forward(model, inputs, train_mode=False).probs, labels.astype(int)

    val_p, val_y = scores_of(va)
    test_p, test_y = scores_of(te)
    T = metrics_mod.fit_temperature(val_p, val_y)
    threshold = metrics_mod.tune_threshold(metrics_mod.apply_temperature(val_p, T), val_y)
    report = metrics_mod.evaluate(test_p, test_y, threshold=threshold,
                                  temperature=T,
                                  phases=[s.phase for s in te])
    payload = {"metrics": report.to_json(),
               "split_fingerprint": split_fingerprint(tr, va, te),
               "split_sizes": [len(tr), len(va), len(te)]}
    payload.update(extra or {})
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return payload


def run_pipeline(config: RunConfig, input_path: str, out_dir: str) -> dict:
    """validate -> textualize (skipped for noNL) -> encode -> train -> eval,
    each stage writing its artifact under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    try:
        rows = read_jsonl(input_path)
        accepted, _, rejects = stage_validate(rows, out_dir)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure("validate", exc) from exc

    try:
        records = stage_textualize(accepted, out_dir) if config.textualize else accepted
    except Exception as exc:
        raise StageFailure("textualize", exc) from exc

    try:
        cache_path = stage_encode(records, out_dir, config.embed_dim)
    except Exception as exc:
        raise StageFailure("encode", exc) from exc

    encoder = StubEncoder(output_dim=config.embed_dim)
    try:
        best, history, splits = stage_train(records, config, encoder, out_dir)
    except Exception as exc:
        raise StageFailure("train", exc) from exc

    try:
        payload = stage_eval(best, splits, os.path.join(out_dir, "report.json"),
                             extra={"config": config_json(config),
                                    "rejected": rejects,
                                    "accepted": len(accepted),
                                    "cache": os.path.basename(cache_path)})
    except Exception as exc:
        raise StageFailure("eval", exc) from exc
    return payload


GRID_VARIANTS = [("full", {}), ("altgate", {"gate_mode": GATE_ALL}),
                 ("nonl", {"textualize": False})] + [
    (f"single_{m}", {"modalities": (m,)}) for m in ALL_MODALITIES]


def ablation_grid(config: RunConfig, input_path: str, out_dir: str) -> list[dict]:
    """Full model, alternate gate, no-textualization, and the seven
    single-modality runs under identical seed and splits; writes one report
    per variant plus a combined grid.csv."""
    os.makedirs(out_dir, exist_ok=True)
    rows = read_jsonl(input_path)
    accepted, _, _ = stage_validate(rows, out_dir)
    textualized = stage_textualize(accepted, out_dir)
    stage_encode(textualized, out_dir, config.embed_dim)

    reports = []
    for name, changes in GRID_VARIANTS:
        variant = dataclasses.replace(config, **changes)
        records = textualized if variant.textualize else accepted
        encoder = StubEncoder(output_dim=variant.embed_dim)
        best, history, splits = stage_train(records, variant, encoder, out_dir, tag=name)
        payload = stage_eval(best, splits,
                             os.path.join(out_dir, f"report_{name}.json"),
                             extra={"variant": name,
                                    "config": config_json(variant)})
        reports.append(payload)

    fingerprints = {r["split_fingerprint"] for r in reports if
                    len(r["config"]["modalities"]) == len(ALL_MODALITIES)}
    with open(os.path.join(out_dir, "grid.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "gate_mode", "textualize", "modalities",
                         "auc", "ap", "f1", "ece", "nll", "split_fingerprint"])
        for r in reports:
            m = r["metrics"]
            writer.writerow([r["variant"], r["config"]["gate_mode"],
                             r["config"]["textualize"],
                             "|".join(r["config"]["modalities"]),
                             f"{m['auc']:.6f}", f"{m['ap']:.6f}", f"{m['f1']:.6f}",
                             f"{m['ece']:.6f}", f"{m['nll']:.6f}",
                             r["split_fingerprint"]])
    return reports


# --- argument parsing ---------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--verbose", action="store_true")


def _config_from(args, **overrides) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trialfuse",
        description="Multimodal trial-outcome prediction pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="write the synthetic fixture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    _add_common(p)

    p = sub.add_parser("validate", help="run the QC battery on a JSONL corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("textualize", help="render offline narratives")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("smiles", help="canonicalize SMILES strings")
    p.add_argument("strings", nargs="*")
    p.add_argument("--input", help="file with one SMILES per line")
    _add_common(p)

    p = sub.add_parser("ontology", help="look up a code in the bundled ontology")
    p.add_argument("--code")
    p.add_argument("--ground", help="ground a surface term")
    p.add_argument("--dir", default=None)
    _add_common(p)

    p = sub.add_parser("encode", help="build the embedding cache")
    p.add_argument("--input", required=True)
    p.add_argument("--cache", required=True)
    _add_common(p)

    p = sub.add_parser("check-cache", help="validate an embedding cache file")
    p.add_argument("--cache", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train the fusion model")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--cache", help="read vectors from this cache instead of the stub encoder")
    p.add_argument("--report", required=True)
    _add_common(p)

    p = sub.add_parser("pipeline", help="run all stages end to end")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("ablate", help="run the full ablation grid")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    return parser


def _parse_records(path):
    return [parse_record(row) for row in read_jsonl(path)]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fixtures":
            config = _config_from(args)
            write_jsonl(args.out, fixture_corpus(args.n, seed=config.seed))
            print(f"wrote {args.n} records to {args.out}")
            return EXIT_OK

        if args.command == "validate":
            os.makedirs(args.out_dir, exist_ok=True)
            rows = read_jsonl(args.input)
            accepted, _, rejects = stage_validate(rows, args.out_dir)
            print(f"accepted {len(accepted)} / {len(rows)} records "
                  f"({rejects} rejected)")
            return EXIT_REJECTS if rejects else EXIT_OK

        if args.command == "textualize":
            os.makedirs(args.out_dir, exist_ok=True)
            records = _parse_records(args.input)
            stage_textualize(records, args.out_dir)
            print(f"rendered narratives for {len(records)} records")
            return EXIT_OK

        if args.command == "smiles":
            strings = list(args.strings)
            if args.input:
                with open(args.input, "r", encoding="utf-8") as fh:
                    strings += [line.strip() for line in fh if line.strip()]
            status = EXIT_OK
            for s in strings:
                try:
                    print(canonical_smiles(s))
                except SmilesError as exc:
                    print(f"error: {s!r}: {exc}", file=sys.stderr)
                    status = EXIT_ERROR
            return status

        if args.command == "ontology":
            table = load_ontology(args.dir or default_ontology_dir())
            if args.code:
                concept = table.get(args.code)
                chain = [c.code for c in table.ancestors(args.code)]
                print(f"{concept.code}: {concept.preferred_label} "
                      f"(ancestors: {' -> '.join(chain) or 'none'})")
            if args.ground:
                concept = table.ground(args.ground)
                print(f"{args.ground!r} -> "
                      + (f"{concept.code}: {concept.preferred_label}" if concept else "no match"))
            return EXIT_OK

        if args.command == "encode":
            config = _config_from(args)
            records = _parse_records(args.input)
            if os.path.exists(args.cache):
                os.remove(args.cache)
            cache = EmbeddingCache(args.cache, dim=config.embed_dim)
            count = encode_corpus(records, cache)
            cache.save()
            print(f"cached {count} vectors (dim {cache.dim}) in {args.cache}")
            return EXIT_OK

        if args.command == "check-cache":
            info = check_cache_file(args.cache)
            print(f"ok: dim {info['dim']}, {info['count']} vectors")
            return EXIT_OK

        if args.command == "train":
            config = _config_from(args)
            os.makedirs(args.out_dir, exist_ok=True)
            records = _parse_records(args.input)
            encoder = StubEncoder(output_dim=config.embed_dim)
            best, history, splits = stage_train(records, config, encoder, args.out_dir)
            print(f"trained {len(history)} epochs; "
                  f"best val AUC {evaluate_auc(best, splits[1]):.4f}")
            return EXIT_OK

        if args.command == "eval":
            config = _config_from(args)
            records = _parse_records(args.input)
            model = load_checkpoint(args.model)
            if args.cache:
                encoder = CacheBackedEncoder(EmbeddingCache(args.cache),
                                             output_dim=config.embed_dim)
            else:
                encoder = StubEncoder(output_dim=config.embed_dim)
            labeled = [r for r in records if r.label is not None]
            samples = [build_sample(r, encoder, config.modalities, config.textualize)
                       for r in labeled]
            splits = stratified_split(samples, SplitSpec(seed=config.seed))
            payload = stage_eval(model, splits, args.report,
                                 extra={"config": config_json(config)})
            print(f"test AUC {payload['metrics']['auc']:.4f} "
                  f"-> {args.report}")
            return EXIT_OK

        if args.command == "pipeline":
            config = _config_from(args)
            payload = run_pipeline(config, args.input, args.out_dir)
            print(f"pipeline complete: test AUC {payload['metrics']['auc']:.4f}, "
                  f"{payload['rejected']} records rejected")
            return EXIT_OK

        if args.command == "ablate":
            config = _config_from(args)
            reports = ablation_grid(config, args.input, args.out_dir)
            print(f"grid complete: {len(reports)} variants -> "
                  f"{os.path.join(args.out_dir, 'grid.csv')}")
            return EXIT_OK

        raise ValueError(f"unknown command {args.command!r}")
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
