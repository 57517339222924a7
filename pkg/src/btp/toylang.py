"""Postfix toy language over the tokens {x, 0-9, +, -, *}.

A program is a whitespace-separated token string evaluated on an integer
stack: ``x`` pushes the bound input value, digits push themselves, and the
operators pop two operands (``a b -`` computes a - b).  A program must
leave exactly one value on the stack; that value, rendered as a decimal
string, is its output.  Anything else (stack underflow, unknown token,
leftover operands, empty program) is a runtime error.
"""

from .errors import ToyProgramError

DIGITS = tuple(str(d) for d in range(10))
OPERATORS = ("+", "-", "*")
PROGRAM_TOKENS = ("x",) + DIGITS + OPERATORS


def parse_binding(text: str) -> int:
    """Parse a test-case input that binds ``x`` to an integer.

    Accepts either ``x=3`` (whitespace tolerated) or a bare ``3``.
    """
    body = text.strip()
    if "=" in body:
        name, _, value = body.partition("=")
        if name.strip() != "x":
            raise ToyProgramError(f"unknown binding {name.strip()!r}, expected 'x'")
        body = value
    try:
        return int(body.strip())
    except ValueError:
        raise ToyProgramError(f"input does not bind x to an integer: {text!r}") from None


def run_program(program_text: str, x: int) -> int:
    """Evaluate a postfix program with ``x`` bound to the given value."""
    stack: list[int] = []
    for token in program_text.split():
        if token == "x":
            stack.append(x)
        elif token in DIGITS:
            stack.append(int(token))
        elif token in OPERATORS:
            if len(stack) < 2:
                raise ToyProgramError(f"stack underflow at {token!r}")
            b = stack.pop()
            a = stack.pop()
            if token == "+":
                stack.append(a + b)
            elif token == "-":
                stack.append(a - b)
            else:
                stack.append(a * b)
        else:
            raise ToyProgramError(f"unknown token {token!r}")
    if len(stack) != 1:
        raise ToyProgramError(f"program left {len(stack)} values on the stack, expected 1")
    return stack[0]
