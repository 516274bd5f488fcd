"""Write a synthetic annotated corpus to disk.

Example:
    python scripts/make_synthetic_corpus.py --n 200 --seed 13 --language en \
        --output corpora/train.jsonl
"""

import argparse

from fewner.corpus import save_corpus
from fewner.synthetic import synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100, help="number of sentences")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--language", default="en", choices=("en", "fr", "es"))
    ap.add_argument("--types", default="DISO,CHEM", help="comma-separated type ids")
    ap.add_argument("--max-mentions", type=int, default=3)
    ap.add_argument("--format", default="jsonl", choices=("jsonl", "conll", "brat"))
    ap.add_argument("--output", required=True)
    args = ap.parse_args()

    type_ids = tuple(t.strip() for t in args.types.split(",") if t.strip())
    sentences, _ = synthetic_corpus(
        args.n, args.seed, language=args.language, type_ids=type_ids,
        max_mentions=args.max_mentions,
    )
    save_corpus(sentences, args.output, args.format)
    n_spans = sum(len(s.spans) for s in sentences)
    print(f"{len(sentences)} sentences, {n_spans} spans -> {args.output}")


if __name__ == "__main__":
    main()
