#!/usr/bin/env python3
"""Builds the ~1 MB English test corpus from text shipped with Python and
the system license collection. Output is plain ASCII prose."""

import argparse
import glob
import inspect
import pkgutil
import re
import unicodedata


def pydoc_topics():
    from pydoc_data import topics
    return [topics.topics[k] for k in sorted(topics.topics)]


def licenses():
    out = []
    for path in sorted(glob.glob("/usr/share/common-licenses/*")):
        try:
            with open(path, encoding="utf-8", errors="ignore") as f:
                out.append(f.read())
        except (IsADirectoryError, PermissionError):
            pass
    return out


def stdlib_docstrings():
    import importlib
    out = []
    skip = ("test", "idlelib", "tkinter", "turtledemo", "lib2to3", "ensurepip", "antigravity", "this")
    for mod in sorted(m.name for m in pkgutil.iter_modules() if not m.name.startswith("_")):
        if mod.startswith(skip):
            continue
        try:
            module = importlib.import_module(mod)
        except Exception:
            continue
        doc = inspect.getdoc(module)
        if doc:
            out.append(doc)
        for name, obj in sorted(vars(module).items()):
            if name.startswith("_") or not (inspect.isfunction(obj) or inspect.isclass(obj)):
                continue
            doc = inspect.getdoc(obj)
            if doc and len(doc) > 200:
                out.append(doc)
    return out


def clean(text):
    text = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii")
    text = text.replace("\t", "    ").replace("\r", "")
    text = re.sub(r"[^\x20-\x7e\n]", "", text)
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip() + "\n\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data/corpus_en.txt")
    ap.add_argument("--bytes", type=int, default=1_000_000)
    args = ap.parse_args()
    parts = [clean(t) for t in pydoc_topics() + licenses() + stdlib_docstrings()]
    text = "".join(parts)[: args.bytes]
    if len(text) < args.bytes:
        raise SystemExit(f"only {len(text)} bytes of source text available")
    with open(args.out, "w", encoding="ascii", newline="\n") as f:
        f.write(text)
    print(f"wrote {len(text)} bytes, {len(set(text))} distinct characters to {args.out}")


if __name__ == "__main__":
    main()
