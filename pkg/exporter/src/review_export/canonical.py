"""Reader for the canonical interaction file.

Only the parts the exporter needs: the declared edge count and the review
text of every edge, in edge_id order. Lines are `edge_id user item
rating<TAB>review` with backslash escapes for tab, newline, carriage return
and backslash itself.
"""

from pathlib import Path


def unescape_review(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(text[i + 1])
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(c)
        i += 1
    return "".join(out)


def read_review_texts(path: str | Path) -> list[str]:
    """Review text per edge, index k holding edge_id k."""
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"{path}: bad header, expected 'M N E rating_min rating_max'")
        declared = int(header[2])
        texts = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            head, _, review = line.partition("\t")
            parts = head.split()
            if len(parts) != 4:
                raise ValueError(f"{path}: malformed edge line {lineno}")
            if int(parts[0]) != len(texts):
                raise ValueError(f"{path}: line {lineno}: edge_id {parts[0]} not contiguous")
            texts.append(unescape_review(review))
    if len(texts) != declared:
        raise ValueError(f"{path}: header declares {declared} edges, found {len(texts)}")
    return texts
