"""Prompt rendering, byte-level vocabulary and synthetic language pairs."""

from .templates import (TEMPLATES, ParallelRecord, PromptTemplate, inference_prefix,
                        parse_completion, parse_unit_markup, read_corpus, render_parts,
                        render_prompt, sample_prompts, unit_markup, write_corpus)
from .toy import (ToyLanguageSpec, check_toy_records, gen_toy_corpus, gen_toy_pair, read_records,
                  render_record, render_speech, translate_units, write_records)
from .vocab import SPECIALS, Vocabulary, build_vocab

__all__ = [
    "TEMPLATES", "ParallelRecord", "PromptTemplate", "inference_prefix", "parse_completion",
    "parse_unit_markup", "read_corpus", "render_parts", "render_prompt", "sample_prompts",
    "unit_markup", "write_corpus", "ToyLanguageSpec", "check_toy_records", "gen_toy_corpus",
    "gen_toy_pair", "read_records", "render_record", "render_speech", "translate_units",
    "write_records", "SPECIALS", "Vocabulary", "build_vocab",
]
