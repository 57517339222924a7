"""Shared test helpers: entry construction, decoding oracles, toy corpus."""

import math

from btp.harness import CodeTask, TestCase
from btp.replay import ReplayEntry
from btp.toylm import EOS_TOKEN, ToyLM


def make_entry(prob: float, pass_rate: float | None = None, index: int = 0,
               task_id: str = "t", tokens=("x", "<eos>")) -> ReplayEntry:
    """Entry whose per-token probability is (approximately) ``prob``."""
    tokens = tuple(tokens)
    seq_logprob = len(tokens) * math.log(prob)
    return ReplayEntry(
        task_id=task_id,
        program_tokens=tokens,
        program_text=" ".join(t for t in tokens if t != "<eos>"),
        seq_logprob=seq_logprob,
        seq_prob_normalized=math.exp(seq_logprob / len(tokens)),
        pass_rate=pass_rate,
        insertion_index=index,
    )


def enumerate_ranked(model, prompt: str, max_len: int):
    """Exhaustively score every reachable finished sequence, best first.

    Sequences shorter than max_len terminate by emitting the end token
    (its probability included); length-max_len sequences are forced
    complete without one.  Ties rank lexicographically by token ids,
    matching the decoder's rule.
    """
    finals = []

    def recurse(tokens, ids, logprob):
        dist = model.next_distribution(tokens, prompt)
        for i, token in enumerate(model.vocabulary):
            p = dist[i]
            if p <= 0:
                continue
            extended_lp = logprob + math.log(p)
            if token == model.eos_token or len(tokens) + 1 == max_len:
                finals.append((extended_lp, ids + (i,), tokens + (token,)))
            else:
                recurse(tokens + (token,), ids + (i,), extended_lp)

    recurse((), (), 0.0)
    finals.sort(key=lambda c: (-c[0], c[1]))
    return finals


def greedy_decode(model, prompt: str, max_len: int):
    """Argmax decoding, ties broken by lowest token id."""
    tokens: tuple[str, ...] = ()
    logprob = 0.0
    while True:
        dist = model.next_distribution(tokens, prompt)
        best = min(range(len(dist)), key=lambda i: (-dist[i], i))
        logprob += math.log(dist[best])
        tokens += (model.vocabulary[best],)
        if model.vocabulary[best] == model.eos_token or len(tokens) == max_len:
            return tokens, logprob


# Ten toy tasks whose reference programs are all reachable within six
# tokens.  Prompts differ in their last two words, so an order-2 model can
# tell them apart.
TOY_CORPUS_SPECS = [
    ("t01", "emit double", "x 2 *", [(2, 4), (3, 6), (5, 10)], "arith"),
    ("t02", "emit triple", "x 3 *", [(1, 3), (2, 6), (4, 12)], "arith"),
    ("t03", "add two", "x 2 +", [(0, 2), (3, 5), (7, 9)], "arith"),
    ("t04", "add five", "x 5 +", [(1, 6), (2, 7), (10, 15)], "arith"),
    ("t05", "subtract one", "x 1 -", [(1, 0), (5, 4), (9, 8)], "arith"),
    ("t06", "square value", "x x *", [(2, 4), (3, 9), (4, 16)], "poly"),
    ("t07", "constant seven", "7", [(1, 7), (50, 7)], "const"),
    ("t08", "constant zero", "0", [(3, 0), (8, 0)], "const"),
    ("t09", "flip sign", "0 x -", [(2, -2), (4, -4)], "poly"),
    ("t10", "plus itself", "x x +", [(2, 4), (6, 12)], "poly"),
]


def toy_corpus(n: int = 10, grouped: bool = False):
    """(tasks, reference programs) for the first n corpus specs."""
    tasks, programs = [], {}
    for task_id, prompt, program, cases, group in TOY_CORPUS_SPECS[:n]:
        tests = tuple(TestCase(f"x={x}", str(out)) for x, out in cases)
        tasks.append(CodeTask(task_id, prompt, tests,
                              group=group if grouped else "all"))
        programs[task_id] = program
    return tasks, programs


def seeded_corpus_model(tasks, programs, weight: float = 8.0) -> ToyLM:
    """ToyLM taught each task's reference program by count updates."""
    model = ToyLM()
    for task in tasks:
        tokens = programs[task.task_id].split() + [EOS_TOKEN]
        model.update(tokens, weight, task.prompt)
    return model
