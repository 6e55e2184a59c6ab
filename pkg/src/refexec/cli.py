"""Command-line interface.

    refexec generate   mine a corpus, split it, and write a dataset directory
    refexec split      re-split an existing dataset directory
    refexec train      two-stage training on a dataset directory
    refexec eval       referring-expression metrics (and --acceptance battery)
    refexec qa         question answering metrics
    refexec exec       run one program against one scene
    refexec parse      utterance -> program (templates or LLM-backed)
"""
from __future__ import annotations

import json
import sys

import click

from . import dsl
from .data import (CorpusConfig, DataError, SplitSpec, build_corpus,
                   build_qa_dataset, load_dataset, save_dataset, split_corpus,
                   to_packs)
from .evaluate import (CALIBRATED_QA_THRESHOLD, evaluate_qa, evaluate_rec,
                       qa_metrics, rec_metrics, write_records)
from .language import build_lexicon, parse_utterance
from .scene import SceneConfig, generate_scene
from .vocab import DEFAULT_VOCABULARY, Vocabulary


def _load_vocab(path: str | None) -> Vocabulary:
    if path is None:
        return DEFAULT_VOCABULARY
    with open(path) as fh:
        return Vocabulary.from_json(json.load(fh))


@click.group()
@click.option("--vocab", type=click.Path(exists=True), default=None,
              help="Vocabulary JSON; defaults to the built-in vocabulary.")
@click.pass_context
def main(ctx, vocab):
    """Neuro-symbolic grounding of referring expressions in 3D scenes."""
    ctx.ensure_object(dict)
    ctx.obj["vocabulary"] = _load_vocab(vocab)


@main.command()
@click.option("--out", required=True, type=click.Path(),
              help="Dataset directory to create.")
@click.option("--scenes", default=1000, show_default=True)
@click.option("--instances", default=10, show_default=True,
              help="Instances per scene.")
@click.option("--objects", default=10, show_default=True)
@click.option("--objects-max", default=None, type=int,
              help="Draw object count uniformly from [--objects, --objects-max].")
@click.option("--split", "split_kind", default="iid", show_default=True,
              type=click.Choice(["iid", "fraction", "pairs", "scene_type",
                                 "sparse_dense"]))
@click.option("--fraction", default=None, type=float,
              help="Train fraction for --split fraction.")
@click.option("--holdout", default=None,
              help="Scene type held out for --split scene_type.")
@click.option("--dense-scenes", default=100, show_default=True,
              help="Dense test scenes for --split sparse_dense.")
@click.option("--dense-objects", default="20:40", show_default=True,
              help="M range for dense scenes, MIN:MAX.")
@click.option("--qa", "qa_items", default=0, show_default=True,
              help="Also generate this many QA items over the test scenes.")
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def generate(ctx, out, scenes, instances, objects, objects_max, split_kind,
             fraction, holdout, dense_scenes, dense_objects, qa_items, seed):
    """Mine a corpus of referring expressions and write a dataset directory."""
    vocabulary = ctx.obj["vocabulary"]
    config = CorpusConfig(
        n_scenes=scenes, instances_per_scene=instances,
        scene=SceneConfig(n_objects=objects, n_objects_max=objects_max,
                          between_prob=0.5),
        seed=seed)
    click.echo(f"mining {scenes} scenes ...", err=True)
    corpus = build_corpus(config, vocabulary,
                          progress=lambda n: click.echo(f"  {n} scenes", err=True))
    spec = SplitSpec(kind=split_kind, fraction=fraction, holdout=holdout,
                     seed=seed)
    configs = {"sparse": config}
    dense_corpus = None
    if split_kind == "sparse_dense":
        lo, hi = (int(p) for p in dense_objects.split(":"))
        dense_config = CorpusConfig(
            n_scenes=dense_scenes, instances_per_scene=instances,
            scene=SceneConfig(n_objects=lo, n_objects_max=hi, between_prob=0.5),
            seed=seed, scene_seed_start=1_000_000)
        click.echo(f"mining {dense_scenes} dense scenes ...", err=True)
        dense_corpus = build_corpus(dense_config, vocabulary)
        configs["dense"] = dense_config
    splits = split_corpus(corpus, spec, dense_corpus=dense_corpus)
    qa = None
    if qa_items:
        test_seeds = {i.scene_seed for i in splits.test}
        qa_scenes = [splits.scenes[s] for s in sorted(test_seeds)]
        qa = build_qa_dataset(qa_scenes, vocabulary, n_items=qa_items, seed=seed)
    save_dataset(out, splits, configs, qa_items=qa)
    click.echo(json.dumps({
        "out": out,
        "scenes": len(splits.scenes),
        "train": len(splits.train), "val": len(splits.val),
        "test": len(splits.test),
        "qa": len(qa) if qa else 0}))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--split", "split_kind", required=True,
              type=click.Choice(["iid", "fraction", "pairs", "scene_type"]))
@click.option("--fraction", default=None, type=float)
@click.option("--holdout", default=None)
@click.option("--seed", default=0, show_default=True)
def split(data, out, split_kind, fraction, holdout, seed):
    """Re-split the corpus stored in an existing dataset directory."""
    from .data import Corpus
    splits, qa = load_dataset(data)
    instances = splits.train + splits.val + splits.test
    corpus = Corpus(scenes=splits.scenes, instances=instances,
                    config=CorpusConfig(), vocabulary=splits.vocabulary)
    spec = SplitSpec(kind=split_kind, fraction=fraction, holdout=holdout,
                     seed=seed)
    new_splits = split_corpus(corpus, spec)
    # scene configs are copied through from the source directory
    import os, shutil
    save_dataset(out, new_splits, {"sparse": CorpusConfig()}, qa_items=qa)
    shutil.copy(os.path.join(data, "configs.json"),
                os.path.join(out, "configs.json"))
    click.echo(json.dumps({"out": out, "train": len(new_splits.train),
                           "val": len(new_splits.val),
                           "test": len(new_splits.test)}))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="Checkpoint path to write.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="TrainConfig JSON; CLI flags below override it.")
@click.option("--alpha", default=None, type=float)
@click.option("--lr", default=None, type=float)
@click.option("--stage1-epochs", default=None, type=int)
@click.option("--stage2-epochs", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--report", "report_path", default=None, type=click.Path(),
              help="Write per-epoch records and wall clock as JSON.")
@click.option("--quiet", is_flag=True)
def train(data, out, config_path, alpha, lr, stage1_epochs, stage2_epochs,
          batch_size, seed, report_path, quiet):
    """Two-stage training on a dataset directory; writes a checkpoint."""
    from dataclasses import replace
    from .training import TrainConfig, train as run_training

    splits, _ = load_dataset(data)
    config = TrainConfig()
    if config_path:
        with open(config_path) as fh:
            config = TrainConfig.from_json(json.load(fh))
    overrides = {"alpha": alpha, "learning_rate": lr,
                 "stage1_epochs": stage1_epochs, "stage2_epochs": stage2_epochs,
                 "batch_size": batch_size, "seed": seed}
    config = replace(config, **{k: v for k, v in overrides.items()
                                if v is not None})

    def log(record):
        if not quiet:
            line = f"stage {record.stage} epoch {record.epoch:3d} oce {record.oce:.4f}"
            if record.tce is not None:
                line += f" tce {record.tce:.4f}"
            line += f" val_acc {record.val_accuracy:.3f}"
            click.echo(line, err=True)

    model, report = run_training(
        to_packs(splits, "train"), to_packs(splits, "val"),
        splits.vocabulary, config, out_path=out, log=log)
    summary = {"checkpoint": out, "wall_clock": report.wall_clock,
               "stage1_epochs": report.stage1_epochs_run,
               "stage2_epochs": report.stage2_epochs_run,
               "final_val_accuracy": report.epochs[-1].val_accuracy}
    if report_path:
        with open(report_path, "w") as fh:
            json.dump({"config": config.to_json(),
                       "epochs": [e.to_json() for e in report.epochs],
                       **summary}, fh, indent=2)
    click.echo(json.dumps(summary))


def _resolve_model(model_path):
    if model_path is None:
        return None
    from .encoder import load_checkpoint
    return load_checkpoint(model_path)


@main.command("eval")
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="Checkpoint; omit to evaluate with oracle features.")
@click.option("--split", "split_name", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--records", "records_path", default=None, type=click.Path(),
              help="Write per-instance records as JSONL.")
@click.option("--traces", is_flag=True, help="Include execution traces in records.")
@click.option("--acceptance", is_flag=True,
              help="Run the full acceptance battery (slow); nonzero exit on failure.")
@click.pass_context
def eval_cmd(ctx, data, model_path, split_name, records_path, traces, acceptance):
    """Referring-expression accuracy for a checkpoint (or the oracle)."""
    if acceptance:
        from .acceptance import run_battery
        ok = run_battery(echo=click.echo)
        sys.exit(0 if ok else 1)
    if data is None:
        raise click.UsageError("--data is required unless --acceptance is given")
    splits, _ = load_dataset(data)
    model = _resolve_model(model_path)
    records = evaluate_rec(splits.split(split_name), splits.scenes,
                           splits.vocabulary, model=model,
                           collect_traces=traces)
    if records_path:
        write_records(records_path, records)
    click.echo(json.dumps(rec_metrics(records), indent=2))


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--qa-threshold", default=CALIBRATED_QA_THRESHOLD,
              show_default=True,
              help="Sigmoid threshold for yes/no and counting.")
@click.option("--records", "records_path", default=None, type=click.Path())
def qa(data, model_path, qa_threshold, records_path):
    """Question-answering accuracy over the dataset's qa.jsonl."""
    splits, items = load_dataset(data)
    if not items:
        raise click.UsageError(
            "dataset has no qa.jsonl; regenerate with --qa N")
    model = _resolve_model(model_path)
    records = evaluate_qa(items, splits.scenes, splits.vocabulary,
                          model=model, qa_threshold=qa_threshold)
    if records_path:
        write_records(records_path, records)
    click.echo(json.dumps(qa_metrics(records), indent=2))


@main.command("exec")
@click.option("--program", required=True,
              help="Program text, e.g. '(filter (scene) chair)'.")
@click.option("--scene-seed", default=0, show_default=True)
@click.option("--objects", default=10, show_default=True)
@click.option("--data", type=click.Path(exists=True), default=None,
              help="Take the scene from this dataset directory instead.")
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--qa-threshold", default=0.8, show_default=True)
@click.option("--trace", "trace_path", default=None, type=click.Path())
@click.pass_context
def exec_cmd(ctx, program, scene_seed, objects, data, model_path, qa_threshold,
             trace_path):
    """Execute one program against one scene and print the outcome."""
    from .executor import run_program
    from .evaluate import _features_for

    vocabulary = ctx.obj["vocabulary"]
    if data is not None:
        splits, _ = load_dataset(data)
        vocabulary = splits.vocabulary
        try:
            scene = splits.scenes[scene_seed]
        except KeyError:
            raise click.UsageError(f"scene seed {scene_seed} not in dataset")
    else:
        scene = generate_scene(
            SceneConfig(n_objects=objects, between_prob=0.5), seed=scene_seed)
    node = dsl.lower_anchor(dsl.parse_program(program), vocabulary)
    features = _features_for(scene, _resolve_model(model_path), vocabulary)
    answer, trace = run_program(node, features, qa_threshold=qa_threshold)
    out = {"program": dsl.print_program(node),
           "scene_seed": scene.seed,
           "categories": scene.categories,
           "empty": trace.empty_denotation}
    if trace.target is not None:
        out["target"] = trace.target
        out["target_category"] = scene.categories[trace.target]
    if hasattr(answer, "text"):
        out["answer"] = answer.text
    if trace_path:
        with open(trace_path, "w") as fh:
            json.dump(trace.to_json(), fh, indent=2)
    click.echo(json.dumps(out, indent=2))


@main.command()
@click.argument("utterance")
@click.option("--llm", "use_llm", is_flag=True,
              help="Parse with the LLM client (HTTP endpoint or replay fixture) "
                   "instead of the surface templates.")
@click.option("--show-attempts", is_flag=True)
@click.pass_context
def parse(ctx, utterance, use_llm, show_attempts):
    """Parse an utterance into a program."""
    vocabulary = ctx.obj["vocabulary"]
    if use_llm:
        from .llm import default_client, llm_parse, load_prompt_examples
        program, log = llm_parse(utterance, load_prompt_examples(),
                                 default_client(), vocabulary)
        if show_attempts:
            click.echo(json.dumps(log.to_json(), indent=2), err=True)
    else:
        lexicon = build_lexicon(vocabulary)
        program = parse_utterance(utterance, lexicon)
    lowered = dsl.lower_anchor(program, vocabulary)
    click.echo(json.dumps({
        "program": dsl.print_program(program),
        "lowered": dsl.print_program(lowered),
        "view_dependent": dsl.is_view_dependent(lowered, vocabulary)}))


if __name__ == "__main__":
    main()
