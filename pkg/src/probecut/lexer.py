"""Lossless tokenizer for C/C++ function bodies.

A full parse is deliberately out of scope: the token stream only has to be
good enough to count decision points and Halstead operators/operands, while
reproducing the input byte-for-byte when token texts are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class TokenKind(Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    NUMBER = "number-literal"
    STRING = "string-literal"
    CHAR = "char-literal"
    PUNCTUATOR = "punctuator"
    COMMENT = "comment"
    WHITESPACE = "whitespace"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    line: int
    in_directive: bool = False  # token sits on a preprocessor line


# C plus the C++ additions; used only to separate keywords from identifiers,
# so being generous across both languages is harmless.
KEYWORDS = frozenset(
    """
    alignas alignof asm auto bool break case catch char char8_t char16_t
    char32_t class const consteval constexpr constinit const_cast continue
    co_await co_return co_yield decltype default delete do double dynamic_cast
    else enum explicit export extern false float for friend goto if inline int
    long mutable namespace new noexcept nullptr operator private protected
    public register reinterpret_cast requires restrict return short signed
    sizeof static static_assert static_cast struct switch template this
    thread_local throw true try typedef typeid typename union unsigned using
    virtual void volatile wchar_t while
    _Alignas _Alignof _Atomic _Bool _Complex _Generic _Imaginary _Noreturn
    _Static_assert _Thread_local
    """.split()
)

# Longest-match first. Closing brackets are kept as tokens but are excluded
# from Halstead operator counts (each pair is counted via its opener).
PUNCTUATORS = sorted(
    [
        "<<=", ">>=", "...", "->*", "<=>",
        "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
        "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "::", "##",
        "{", "}", "[", "]", "(", ")", ";", ":", "?", ".", "+", "-", "*", "/",
        "%", "&", "|", "^", "~", "!", "=", "<", ">", ",", "#",
    ],
    key=len,
    reverse=True,
)

CLOSING_BRACKETS = frozenset({")", "]", "}"})

_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


class LexError(ValueError):
    """Unterminated construct or unexpected byte; carries the line number."""


def _scan_quoted(src: str, i: int, line: int, quote: str) -> int:
    """Return the index one past the closing quote, honoring backslash escapes."""
    n = len(src)
    j = i + 1
    while j < n:
        c = src[j]
        if c == "\\":
            j += 2
            continue
        if c == quote:
            return j + 1
        if c == "\n":
            break
        j += 1
    name = "string" if quote == '"' else "char"
    raise LexError(f"line {line}: unterminated {name} literal")


def tokenize_c(source: str) -> list[Token]:
    """Lex a function body into a lossless token stream.

    Comments and literal bodies are opaque (an `if` inside a comment is part of
    the comment token). Preprocessor lines are tokenized normally but every
    token on them carries in_directive=True.
    """
    tokens: list[Token] = []
    n = len(source)
    i = 0
    line = 1
    in_directive = False
    at_line_start = True  # only whitespace seen since the last newline

    def emit(kind: TokenKind, text: str, tok_line: int, directive: bool) -> None:
        tokens.append(Token(kind=kind, text=text, line=tok_line, in_directive=directive))

    while i < n:
        c = source[i]
        start_line = line

        if c in " \t\r\n\v\f":
            directive_here = in_directive
            continued = (
                in_directive
                and tokens
                and tokens[-1].kind is TokenKind.PUNCTUATOR
                and tokens[-1].text == "\\"
            )
            j = i
            while j < n and source[j] in " \t\r\n\v\f":
                if source[j] == "\n":
                    line += 1
                    if continued:
                        continued = False  # backslash continues one line only
                    else:
                        in_directive = False
                    at_line_start = True
                j += 1
            emit(TokenKind.WHITESPACE, source[i:j], start_line, directive_here)
            i = j
            continue

        if c == "/" and i + 1 < n and source[i + 1] == "/":
            j = source.find("\n", i)
            j = n if j == -1 else j
            emit(TokenKind.COMMENT, source[i:j], start_line, in_directive)
            i = j
            at_line_start = False
            continue

        if c == "/" and i + 1 < n and source[i + 1] == "*":
            j = source.find("*/", i + 2)
            if j == -1:
                raise LexError(f"line {start_line}: unterminated block comment")
            text = source[i : j + 2]
            emit(TokenKind.COMMENT, text, start_line, in_directive)
            line += text.count("\n")
            i = j + 2
            at_line_start = False
            continue

        if c == "#" and at_line_start:
            in_directive = True
            # fall through to punctuator handling below

        if c == '"':
            j = _scan_quoted(source, i, start_line, '"')
            emit(TokenKind.STRING, source[i:j], start_line, in_directive)
            i = j
            at_line_start = False
            continue

        if c == "'":
            j = _scan_quoted(source, i, start_line, "'")
            emit(TokenKind.CHAR, source[i:j], start_line, in_directive)
            i = j
            at_line_start = False
            continue

        if c in _IDENT_START:
            j = i + 1
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            text = source[i:j]
            kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
            emit(kind, text, start_line, in_directive)
            i = j
            at_line_start = False
            continue

        if c in _DIGITS or (c == "." and i + 1 < n and source[i + 1] in _DIGITS):
            # pp-number: digits, idents chars, dots, and exponent signs
            j = i + 1
            while j < n:
                d = source[j]
                if d in _IDENT_CONT or d == ".":
                    j += 1
                elif d in "+-" and source[j - 1] in "eEpP":
                    j += 1
                else:
                    break
            emit(TokenKind.NUMBER, source[i:j], start_line, in_directive)
            i = j
            at_line_start = False
            continue

        for p in PUNCTUATORS:
            if source.startswith(p, i):
                emit(TokenKind.PUNCTUATOR, p, start_line, in_directive)
                i += len(p)
                at_line_start = False
                break
        else:
            # Unknown byte (stray backslash, non-ASCII): keep losslessness by
            # treating it as a one-character punctuator.
            emit(TokenKind.PUNCTUATOR, c, start_line, in_directive)
            i += 1
            at_line_start = False

    return tokens
