"""Expression-to-input transforms for each model family.

Rank tokenization sorts genes by descending expression (ties broken by
ascending gene index, zeros dropped) and maps gene index g to token id
g + TOKEN_OFFSET so special ids never collide with gene ids. Three special
layouts exist: ``start_end_pad`` wraps with start/end and pads to max_len,
``cls_first`` prepends CLS and pads, ``none`` truncates only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CellProfile, GeneVocabulary
from .errors import ParameterError

PAD_ID = 0
START_ID = 1
END_ID = 2
CLS_ID = 3
TOKEN_OFFSET = 4

SPECIAL_LAYOUTS = ("start_end_pad", "cls_first", "none")
REPRESENTATIONS = ("rank_tokens", "binned_expression", "symbol_text")


@dataclass
class PrepRule:
    family: str
    max_len: int
    specials: str
    representation: str

    def __post_init__(self):
        if self.max_len < 1:
            raise ParameterError(f"max_len must be >= 1, got {self.max_len}")
        if self.specials not in SPECIAL_LAYOUTS:
            raise ParameterError(f"specials must be one of {SPECIAL_LAYOUTS}, got {self.specials!r}")
        if self.representation not in REPRESENTATIONS:
            raise ParameterError(
                f"representation must be one of {REPRESENTATIONS}, got {self.representation!r}"
            )


@dataclass
class TokenSequence:
    """Token ids plus the positions of any special tokens.

    ``tokens`` has the final on-model length: padded layouts always emit
    exactly ``max_len`` ids, the bare layout emits only content.
    """

    tokens: np.ndarray
    max_len: int
    start_pos: int | None = None
    end_pos: int | None = None
    cls_pos: int | None = None
    pad_from: int | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ParameterError("tokens must be one-dimensional")
        if len(self.tokens) > self.max_len:
            raise ParameterError(f"sequence length {len(self.tokens)} exceeds max_len {self.max_len}")

    def __len__(self) -> int:
        return len(self.tokens)

    def content_mask(self) -> np.ndarray:
        """True for every non-pad position."""
        return self.tokens != PAD_ID


def rank_genes(profile: CellProfile) -> list[int]:
    """Gene indices in descending-expression order; ties by ascending index."""
    return sorted(profile.expression, key=lambda idx: (-profile.expression[idx], idx))


def prep_rank_sequence(profile: CellProfile, rule: PrepRule) -> TokenSequence:
    """Build the rank-token sequence mandated by the rule's special layout."""
    if rule.representation != "rank_tokens":
        raise ParameterError(f"rule {rule.family!r} does not use rank tokens")
    gene_tokens = [g + TOKEN_OFFSET for g in rank_genes(profile)]

    if rule.specials == "none":
        return TokenSequence(gene_tokens[: rule.max_len], rule.max_len)

    if rule.specials == "start_end_pad":
        if rule.max_len < 2:
            raise ParameterError(f"max_len {rule.max_len} cannot hold start and end tokens")
        content = gene_tokens[: rule.max_len - 2]
        tokens = [START_ID, *content, END_ID]
        end_pos = len(tokens) - 1
        n_pad = rule.max_len - len(tokens)
        tokens += [PAD_ID] * n_pad
        return TokenSequence(
            tokens,
            rule.max_len,
            start_pos=0,
            end_pos=end_pos,
            pad_from=end_pos + 1 if n_pad else None,
        )

    # cls_first
    content = gene_tokens[: rule.max_len - 1]
    tokens = [CLS_ID, *content]
    n_pad = rule.max_len - len(tokens)
    pad_from = len(tokens) if n_pad else None
    tokens += [PAD_ID] * n_pad
    return TokenSequence(tokens, rule.max_len, cls_pos=0, pad_from=pad_from)


def bin_expression(profile: CellProfile, n_genes: int, n_bins: int = 7) -> np.ndarray:
    """Per-profile equal-width bins over log1p expression.

    Zero expression stays bin 0; nonzero values map to bins 1..n_bins, with
    the profile's maximum always landing in the top bin. A profile whose
    nonzero values are all equal has no width to split, so everything
    nonzero goes to the top bin.
    """
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    bins = np.zeros(n_genes, dtype=np.int64)
    if not profile.expression:
        return bins
    idx = np.fromiter(profile.expression.keys(), dtype=np.int64)
    logged = np.log1p(np.fromiter(profile.expression.values(), dtype=np.float64))
    lo, hi = logged.min(), logged.max()
    if hi == lo:
        bins[idx] = n_bins
        return bins
    scaled = 1 + np.floor((logged - lo) / (hi - lo) * n_bins).astype(np.int64)
    bins[idx] = np.minimum(scaled, n_bins)
    return bins


def symbol_text(profile: CellProfile, vocab: GeneVocabulary, max_genes: int) -> str:
    """Space-joined symbols in rank order, truncated to max_genes."""
    if max_genes < 1:
        raise ParameterError(f"max_genes must be >= 1, got {max_genes}")
    return " ".join(vocab.symbol_of(g) for g in rank_genes(profile)[:max_genes])


def top_k_gene_names(profile: CellProfile, vocab: GeneVocabulary, k: int) -> list[str]:
    """Symbols of the k highest-expressed genes (all of them when fewer)."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    return [vocab.symbol_of(g) for g in rank_genes(profile)[:k]]
