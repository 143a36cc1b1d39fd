"""Lower-casing, diacritic folding, and punctuation-splitting tokenization."""

import unicodedata
from dataclasses import dataclass, field

# applied before canonical decomposition, which leaves these untouched
DOTTED_I_MAP = {"ı": "i", "İ": "i", "i̇": "i"}


@dataclass
class NormalizeConfig:
    lowercase: bool = True
    fold_diacritics: bool = False
    fold_map: dict = field(default_factory=dict)


def fold_diacritics(text, extra=None):
    """Strip combining marks after NFD decomposition, plus dotted/dotless i."""
    mapping = dict(DOTTED_I_MAP)
    if extra:
        mapping.update(extra)
    text = "".join(mapping.get(ch, ch) for ch in text)
    decomposed = unicodedata.normalize("NFD", text)
    stripped = "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn")
    return unicodedata.normalize("NFC", stripped)


def _is_split_char(ch):
    cat = unicodedata.category(ch)
    return cat[0] in ("P", "S")


def tokenize(text):
    """Whitespace tokenization after isolating punctuation and symbols."""
    out = []
    for ch in text:
        if _is_split_char(ch):
            out.append(" ")
            out.append(ch)
            out.append(" ")
        else:
            out.append(ch)
    return " ".join("".join(out).split())


def normalize(text, config=None):
    """Normalize one line of text. Bytes are decoded as strict UTF-8."""
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8")  # raises UnicodeDecodeError
    config = config or NormalizeConfig()
    if config.lowercase:
        text = text.lower()
    if config.fold_diacritics:
        text = fold_diacritics(text, config.fold_map)
    elif config.fold_map:
        text = "".join(config.fold_map.get(ch, ch) for ch in text)
    return tokenize(text)
