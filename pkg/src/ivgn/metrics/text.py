import re
from typing import List

_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)


def tokenize(text: str) -> List[str]:
    """Lowercase, punctuation to spaces, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()
