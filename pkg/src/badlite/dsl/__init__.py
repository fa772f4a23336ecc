"""Statement language: ASTs, parser, and canonical pretty-printer."""

from . import ast
from .parser import parse, parse_one
from .printer import pretty_print, print_expr, print_query, print_statement

__all__ = ["ast", "parse", "parse_one", "pretty_print", "print_expr",
           "print_query", "print_statement"]
