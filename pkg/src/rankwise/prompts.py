"""Prompt construction for reranking windows and teacher labeling calls.

Templates are plain text files with ``{num}``, ``{query}``, ``{answer}``, and
``{passages}`` placeholders, substituted literally (no str.format, so braces
inside queries or passages are safe).  The shipped defaults live under
``rankwise/templates/``; any of them can be overridden with a file path.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

SELECTION_DOMAINS = ("complex-qa", "coding", "math-problem", "math-theorem")
DOMAINS = SELECTION_DOMAINS + ("web-search",)

_POSITIVES_TEMPLATE_FILES = {
    "complex-qa": "positives_complex_qa.txt",
    "coding": "positives_coding.txt",
    "math-problem": "positives_math_problem.txt",
    "math-theorem": "positives_math_theorem.txt",
}


def _load_packaged(name: str) -> str:
    return resources.files("rankwise.templates").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    """A text template rendered by literal placeholder substitution."""

    text: str

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))

    def render(self, **values: str) -> str:
        out = self.text
        for key, value in values.items():
            out = out.replace("{%s}" % key, str(value))
        return out.rstrip("\n")


def rerank_window_template() -> PromptTemplate:
    """Default single-turn window prompt (think/answer structured output)."""
    return PromptTemplate(_load_packaged("rerank_window.txt"))


def positives_template(domain: str) -> PromptTemplate:
    try:
        return PromptTemplate(_load_packaged(_POSITIVES_TEMPLATE_FILES[domain]))
    except KeyError:
        raise ValueError(
            f"no positives-selection prompt for domain {domain!r}; "
            f"expected one of {SELECTION_DOMAINS}"
        ) from None


def hard_negatives_template() -> PromptTemplate:
    return PromptTemplate(_load_packaged("hard_negatives.txt"))


def numbered_block(texts: Sequence[str], style: str = "colon") -> str:
    """Join passages into a numbered block.

    style "colon"   -> ``[i]: text``  (window prompt)
    style "passage" -> ``Passage [i]: text``  (selection prompts)
    """
    if style == "colon":
        lines = [f"[{i}]: {t}" for i, t in enumerate(texts, start=1)]
    elif style == "passage":
        lines = [f"Passage [{i}]: {t}" for i, t in enumerate(texts, start=1)]
    else:
        raise ValueError(f"unknown block style {style!r}")
    return "\n\n".join(lines)


def build_rerank_prompt(
    query_text: str,
    passage_texts: Sequence[str],
    template: PromptTemplate | None = None,
    max_passage_chars: int | None = None,
) -> str:
    """Fill the window prompt with locally numbered passages 1..m."""
    template = template or rerank_window_template()
    texts = list(passage_texts)
    if max_passage_chars is not None:
        texts = [t[:max_passage_chars] for t in texts]
    return template.render(
        num=str(len(texts)),
        query=query_text,
        passages=numbered_block(texts, style="colon"),
    )


def build_selection_prompt(
    template: PromptTemplate,
    query_text: str,
    answer_text: str,
    passage_texts: Sequence[str],
) -> str:
    return template.render(
        query=query_text,
        answer=answer_text,
        passages=numbered_block(passage_texts, style="passage"),
    )


def build_listwise_messages(query_text: str, passage_texts: Sequence[str]) -> list[dict]:
    """Multi-turn teacher conversation for listwise ranking of a training list.

    One passage per exchange, then a final instruction asking for the full
    descending ranking.  The gold answer is deliberately absent here.
    """
    num = len(passage_texts)
    messages = [
        {
            "role": "user",
            "content": (
                "You are an intelligent assistant that can rank passages based on "
                f"their relevance to the query. I will provide you with {num} passages, "
                "each indicated by a numerical identifier []. Rank the passages based "
                f"on their relevance to the query: {query_text}."
            ),
        },
        {"role": "assistant", "content": "Okay, please provide the passages."},
    ]
    for i, text in enumerate(passage_texts, start=1):
        messages.append({"role": "user", "content": f"[{i}] {text}"})
        messages.append({"role": "assistant", "content": f"Received passage [{i}]"})
    messages.append(
        {
            "role": "user",
            "content": (
                f"Search Query: {query_text}. Rank the {num} passages above based on "
                "their relevance to the search query. The passages should be listed "
                "in descending order using identifiers. The most relevant passages "
                "should be listed first. The output format should be [] > [], "
                "e.g., [4] > [2]. Only response the ranking results, do not say "
                "any word or explain."
            ),
        }
    )
    return messages
