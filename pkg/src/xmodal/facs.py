"""Facial Action Coding System codebook and attribute-phrase plumbing.

The 30-entry codebook is embedded verbatim from the coding-system table,
including its original capitalization quirks ("Check Raiser", "Check
Puffer", "Lips part"), so downstream text is reproducible against the
source. Phrases are the lowercased descriptions joined with " and ".
"""

import csv
from dataclasses import dataclass, field

from .errors import AUParseError, ContractError, UnknownAUError

# (id, description) pairs, ascending id
_CODEBOOK_ROWS = (
    (1, "Inner Brow Raiser"),
    (2, "Outer Brow Raiser"),
    (4, "Brow Lowerer"),
    (5, "Upper Lid Raiser"),
    (6, "Check Raiser"),
    (7, "Lid Tightener"),
    (9, "Nose Wrinkler"),
    (10, "Upper Lip Raiser"),
    (11, "Nasolabial Deepener"),
    (12, "Lip Corner Puller"),
    (13, "Check Puffer"),
    (14, "Dimpler"),
    (15, "Lip Corner Depressor"),
    (16, "Lower Lip Depressor"),
    (17, "Chin Raiser"),
    (18, "Lip Puckerer"),
    (20, "Lip stretcher"),
    (22, "Lip Funneler"),
    (23, "Lip Tightener"),
    (24, "Lip Pressor"),
    (25, "Lips part"),
    (26, "Jaw Drop"),
    (27, "Mouth Stretch"),
    (28, "Lip Suck"),
    (41, "Lid droop"),
    (42, "Slit"),
    (43, "Eyes Closed"),
    (44, "Squint"),
    (45, "Blink"),
    (46, "Wink"),
)

PHRASE_JOINER = " and "
PAD_ID = 0
UNK_ID = 1


@dataclass(frozen=True)
class ActionUnit:
    id: int
    description: str


CODEBOOK = {row[0]: ActionUnit(*row) for row in _CODEBOOK_ROWS}


@dataclass(frozen=True)
class AttributePhrase:
    """Deterministic text for an AU combination, with its provenance."""

    text: str
    source_aus: tuple = field(default_factory=tuple)


def parse_au_string(s: str) -> list:
    """Parse "AU6+AU12" style text into AU ids, input order, deduplicated.

    Case-insensitive, whitespace around units is allowed. Raises
    UnknownAUError for ids outside the codebook and AUParseError (with the
    character position) for anything that is not AU<digits> joined by '+'.
    """
    ids = []
    pos = 0
    n = len(s)
    expecting_unit = True
    while True:
        while pos < n and s[pos].isspace():
            pos += 1
        if pos >= n:
            if expecting_unit:
                raise AUParseError("expected an AU unit", pos)
            break
        if not expecting_unit:
            if s[pos] != "+":
                raise AUParseError(f"expected '+' but found {s[pos]!r}", pos)
            pos += 1
            expecting_unit = True
            continue
        if s[pos : pos + 2].upper() != "AU":
            raise AUParseError(f"expected 'AU' but found {s[pos:pos + 2]!r}", pos)
        pos += 2
        start = pos
        while pos < n and s[pos].isdigit():
            pos += 1
        if pos == start:
            raise AUParseError("expected digits after 'AU'", pos)
        au_id = int(s[start:pos])
        if au_id not in CODEBOOK:
            raise UnknownAUError(au_id)
        if au_id not in ids:
            ids.append(au_id)
        expecting_unit = False
    return ids


def format_au_string(ids) -> str:
    """Inverse of parse_au_string on valid id lists: [6, 12] -> "AU6+AU12"."""
    for au_id in ids:
        if au_id not in CODEBOOK:
            raise UnknownAUError(au_id)
    return "+".join(f"AU{au_id}" for au_id in ids)


def describe(aus) -> AttributePhrase:
    """Join the lowercased codebook descriptions of the given ids.

    Duplicates are dropped with order preserved; the empty list is an error.
    """
    seen = []
    for au_id in aus:
        if au_id not in CODEBOOK:
            raise UnknownAUError(au_id)
        if au_id not in seen:
            seen.append(au_id)
    if not seen:
        raise ContractError("describe: empty AU list")
    text = PHRASE_JOINER.join(CODEBOOK[i].description.lower() for i in seen)
    return AttributePhrase(text=text, source_aus=tuple(seen))


class Vocabulary:
    """token -> id map over the codebook words plus the phrase joiner.

    Construction is deterministic: descriptions are scanned in ascending AU
    id order and each new lowercased token takes the next id; the joiner
    word comes last. Id 0 is padding, id 1 is the unknown token.
    """

    def __init__(self):
        self.token_to_id = {}
        next_id = 2
        words = []
        for au_id, _ in _CODEBOOK_ROWS:
            words.extend(CODEBOOK[au_id].description.lower().split())
        words.extend(PHRASE_JOINER.split())
        for word in words:
            if word not in self.token_to_id:
                self.token_to_id[word] = next_id
                next_id += 1

    def __len__(self):
        # includes the two reserved ids
        return len(self.token_to_id) + 2

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def tokenize(phrase, vocab: Vocabulary, max_len: int) -> list:
    """Whitespace-split a phrase and map to ids, padded/truncated to max_len.

    Accepts an AttributePhrase or a plain string. Unknown words map to id 1.
    """
    if max_len < 1:
        raise ContractError(f"tokenize: max_len must be >= 1, got {max_len}")
    text = phrase.text if isinstance(phrase, AttributePhrase) else phrase
    ids = [vocab.lookup(tok) for tok in text.split()][:max_len]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return ids


def export_codebook_csv(path) -> None:
    """Write the codebook as CSV with header au_id,description."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["au_id", "description"])
        for au_id, desc in _CODEBOOK_ROWS:
            writer.writerow([au_id, desc])
