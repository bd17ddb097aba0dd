#!/usr/bin/env python3
"""Price a token-usage total against a price table.

Give it either --prompt-tokens/--completion-tokens or --total-tokens together
with --completion-tokens (prompt = total - completion).  Prices come from the
bundled sample unless --prices points at another table.
"""

import argparse
import sys

from dualpath.llm import PriceTable, TokenUsage, estimate_cost


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="gpt-3.5-turbo")
    parser.add_argument("--prices", help="path to a price-table JSON file")
    parser.add_argument("--prompt-tokens", type=int)
    parser.add_argument("--total-tokens", type=int)
    parser.add_argument("--completion-tokens", type=int, required=True)
    args = parser.parse_args()

    if (args.prompt_tokens is None) == (args.total_tokens is None):
        parser.error("give exactly one of --prompt-tokens or --total-tokens")
    prompt = (
        args.prompt_tokens
        if args.prompt_tokens is not None
        else args.total_tokens - args.completion_tokens
    )
    if prompt < 0 or args.completion_tokens < 0:
        parser.error("token counts must be nonnegative")

    prices = PriceTable.from_file(args.prices) if args.prices else PriceTable.bundled_sample()
    usage = TokenUsage(prompt_tokens=prompt, completion_tokens=args.completion_tokens)
    cost = estimate_cost([usage], args.model, prices)
    print(f"{args.model}: prompt {prompt:,} + completion {args.completion_tokens:,} tokens -> ${cost}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
