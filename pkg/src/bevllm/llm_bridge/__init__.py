from .generation import GenerationResult, answer_targets, assemble_llm_input, generate_caption, spliced_position
from .lora import LoraAdapter, lora_apply, make_adapters
from .projection import ProjectionMlp, project_queries
from .prompt import ChatMessage, PromptAssembly, build_prompt, caption_messages, render
from .tokenizer import WordTokenizer, special_token_registry
from .toy_lm import ToyFrozenLm, ToyLmConfig

__all__ = [
    "ChatMessage",
    "GenerationResult",
    "LoraAdapter",
    "ProjectionMlp",
    "PromptAssembly",
    "ToyFrozenLm",
    "ToyLmConfig",
    "WordTokenizer",
    "answer_targets",
    "assemble_llm_input",
    "build_prompt",
    "caption_messages",
    "generate_caption",
    "lora_apply",
    "make_adapters",
    "project_queries",
    "render",
    "special_token_registry",
    "spliced_position",
]
