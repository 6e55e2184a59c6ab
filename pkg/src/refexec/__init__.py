"""Neuro-symbolic referring-expression grounding over synthetic 3D scenes.

The pipeline: synthetic scenes (`scene`) are described by programs in a small
typed DSL (`dsl`) produced from natural language (`language`, `llm`); programs
execute softly over per-concept feature scores (`executor`) supplied either by
geometric oracles (`features`) or by a trained point-cloud encoder
(`encoder`, `training`); corpora, splits, and metrics live in `data` and
`evaluate`.
"""
from .data import (Corpus, CorpusConfig, DataError, DatasetSplits, QAInstance,
                   SplitSpec, build_corpus, build_qa_dataset, load_dataset,
                   save_dataset, split_corpus, to_packs)
from .dsl import (LoweringError, ParseError, TypecheckError, ValueType,
                  lower_anchor, parse_program, print_program, typecheck)
from .encoder import (CheckpointError, EncoderConfig, GroundingModel,
                      LearnedFeatures, load_checkpoint, save_checkpoint)
from .evaluate import (CALIBRATED_QA_THRESHOLD, evaluate_qa, evaluate_rec,
                       qa_metrics, rec_metrics)
from .executor import (Answer, ExecutionError, Trace, run_program)
from .features import ArrayFeatures, OracleFeatures, random_features
from .language import (GenerationError, Lexicon, UtteranceParseError,
                       build_lexicon, generate_utterance, parse_utterance)
from .llm import (HttpClient, ReplayClient, TransportError,
                  ValidationExhaustedError, llm_parse, load_prompt_examples)
from .scene import (Scene, SceneConfig, SceneGenerationError, TaskInstance,
                    generate_scene)
from .training import (DivergenceError, ScenePack, TrainConfig, TrainReport,
                       TrainingError, train)
from .vocab import DEFAULT_VOCABULARY, Vocabulary, VocabularyError

__all__ = [
    "Answer", "ArrayFeatures", "CALIBRATED_QA_THRESHOLD", "CheckpointError",
    "Corpus", "CorpusConfig", "DEFAULT_VOCABULARY", "DataError",
    "DatasetSplits", "DivergenceError", "EncoderConfig", "ExecutionError",
    "GenerationError", "GroundingModel", "HttpClient", "LearnedFeatures",
    "Lexicon", "LoweringError", "OracleFeatures", "ParseError", "QAInstance",
    "ReplayClient", "Scene", "SceneConfig", "SceneGenerationError",
    "ScenePack", "SplitSpec", "TaskInstance", "Trace", "TrainConfig",
    "TrainReport", "TrainingError", "TransportError", "TypecheckError",
    "UtteranceParseError", "ValidationExhaustedError", "ValueType",
    "Vocabulary", "VocabularyError", "build_corpus", "build_lexicon",
    "build_qa_dataset", "evaluate_qa", "evaluate_rec", "generate_scene",
    "generate_utterance", "llm_parse", "load_checkpoint", "load_dataset",
    "load_prompt_examples", "lower_anchor", "parse_program", "parse_utterance",
    "print_program", "qa_metrics", "random_features", "rec_metrics",
    "run_program", "save_checkpoint", "save_dataset", "split_corpus", "train",
    "to_packs", "typecheck",
]
