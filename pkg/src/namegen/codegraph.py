"""Java method -> code graph: lexing, a simplified parse tree, subtoken
splitting, typed-edge graph construction, keyword labeling and corpus stats.

The graph has one node per source token, per identifier subtoken and per
parse-tree internal node. Edge types: next_token, sub_token, child,
last_lexical_use, each paired with a reverse_* variant so message passing
runs both ways.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import DataError, ParseError

NAME_MASK = "<NAME-MASK>"

JAVA_KEYWORDS = {
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char",
    "class", "const", "continue", "default", "do", "double", "else", "enum",
    "extends", "final", "finally", "float", "for", "goto", "if", "implements",
    "import", "instanceof", "int", "interface", "long", "native", "new",
    "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws",
    "transient", "try", "void", "volatile", "while", "true", "false", "null",
}

# maximal-munch operator table, longest first
_OPERATORS = sorted(
    [
        ">>>=", ">>>", "<<=", ">>=", "===", "->", "::", "++", "--", "&&", "||",
        "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
        "<<", ">>", "+", "-", "*", "/", "%", "=", "<", ">", "!", "~", "&", "|",
        "^", "?", ":", "@",
    ],
    key=len,
    reverse=True,
)
_PUNCT = set("(){}[];,.")

FORWARD_EDGE_TYPES = ("next_token", "sub_token", "child", "last_lexical_use")
ALL_EDGE_TYPES = FORWARD_EDGE_TYPES + tuple(f"reverse_{t}" for t in FORWARD_EDGE_TYPES)

AST_KINDS = (
    "MethodDecl", "ParamList", "Block", "Statement", "Expr", "Call",
    "Name", "Literal", "Operator",
)


@dataclass(frozen=True)
class Token:
    surface: str
    kind: str  # identifier | keyword | literal | operator | punctuation
    pos: int   # character offset in the source


@dataclass
class TokenSeq:
    tokens: list[Token]
    source: str


@dataclass
class AstTree:
    # node i: (kind label, list of child node ids); leaves additionally map
    # to exactly one token index via leaf_token
    kinds: list[str]
    children: list[list[int]]
    root: int
    leaf_token: dict[int, int]


@dataclass
class MethodRecord:
    body: str
    name_subtokens: list[str]
    project: str = ""
    split: str = "train"
    method_id: str = ""


@dataclass
class GraphNode:
    surface: str
    is_lexical: bool
    is_subtoken: bool
    is_candidate: bool  # identifier-subtoken-level surface, eligible as keyword


@dataclass
class CodeGraph:
    nodes: list[GraphNode]
    edges: dict[str, list[tuple[int, int]]]
    masked_name_positions: list[int]
    keyword_labels: list[int] | None = None
    name_subtokens: list[str] = field(default_factory=list)
    method_id: str = ""

    def num_token_nodes(self) -> int:
        return sum(1 for n in self.nodes if n.is_lexical and not n.is_subtoken)

    def lexical_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.is_lexical]

    def candidate_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.is_candidate]


# ---------------------------------------------------------------------------
# lexer


def tokenize_method(source: str) -> TokenSeq:
    if not source.strip():
        raise ParseError("empty input")
    tokens: list[Token] = []
    i, n = 0, len(source)
    depth = 0
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if source.startswith("//", i):
            j = source.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if source.startswith("/*", i):
            j = source.find("*/", i + 2)
            if j < 0:
                raise ParseError(f"unterminated block comment at position {i}")
            i = j + 2
            continue
        if c in "\"'":
            j = i + 1
            while j < n and source[j] != c:
                if source[j] == "\\":
                    j += 1
                j += 1
            if j >= n:
                kind = "string" if c == '"' else "char"
                raise ParseError(f"unterminated {kind} literal at position {i}")
            tokens.append(Token(source[i : j + 1], "literal", i))
            i = j + 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            m = re.match(r"0[xX][0-9a-fA-F]+[lL]?|\d+\.\d*(?:[eE][+-]?\d+)?[fFdD]?"
                         r"|\.\d+(?:[eE][+-]?\d+)?[fFdD]?|\d+(?:[eE][+-]?\d+)?[fFdDlL]?",
                         source[i:])
            tokens.append(Token(m.group(0), "literal", i))
            i += m.end()
            continue
        if c.isalpha() or c in "_$":
            m = re.match(r"[A-Za-z_$][A-Za-z0-9_$]*", source[i:])
            surface = m.group(0)
            kind = "keyword" if surface in JAVA_KEYWORDS else "identifier"
            tokens.append(Token(surface, kind, i))
            i += m.end()
            continue
        if c in _PUNCT:
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth < 0:
                    raise ParseError(f"unbalanced '}}' at position {i}")
            tokens.append(Token(c, "punctuation", i))
            i += 1
            continue
        for op in _OPERATORS:
            if source.startswith(op, i):
                tokens.append(Token(op, "operator", i))
                i += len(op)
                break
        else:
            raise ParseError(f"unexpected character {c!r} at position {i}")
    if depth != 0:
        raise ParseError("unbalanced braces: missing '}'")
    if not tokens:
        raise ParseError("no tokens in input")
    return TokenSeq(tokens, source)


# ---------------------------------------------------------------------------
# simplified parser


class _TreeBuilder:
    def __init__(self):
        self.kinds: list[str] = []
        self.children: list[list[int]] = []
        self.leaf_token: dict[int, int] = {}

    def node(self, kind: str, kids: list[int] | None = None) -> int:
        self.kinds.append(kind)
        self.children.append(kids or [])
        return len(self.kinds) - 1

    def leaf(self, kind: str, tok_idx: int) -> int:
        nid = self.node(kind)
        self.leaf_token[nid] = tok_idx
        return nid


_TOKEN_LEAF_KIND = {
    "identifier": "Name",
    "keyword": "Name",
    "literal": "Literal",
    "operator": "Operator",
    "punctuation": "Operator",
}


def parse_method(seq: TokenSeq) -> AstTree:
    """Coarse parse: header / param list / block, statements split on ';' and
    nested braces, calls recognized as identifier immediately before '('."""
    toks = seq.tokens
    b = _TreeBuilder()

    def find_matching(open_idx: int, open_s: str, close_s: str) -> int:
        depth = 0
        for j in range(open_idx, len(toks)):
            if toks[j].surface == open_s:
                depth += 1
            elif toks[j].surface == close_s:
                depth -= 1
                if depth == 0:
                    return j
        raise ParseError(f"unmatched {open_s!r} at position {toks[open_idx].pos}")

    # locate the parameter list: first top-level '('
    try:
        lparen = next(i for i, t in enumerate(toks) if t.surface == "(")
    except StopIteration:
        raise ParseError("no parameter list found") from None
    rparen = find_matching(lparen, "(", ")")
    try:
        lbrace = next(i for i in range(rparen + 1, len(toks)) if toks[i].surface == "{")
    except StopIteration:
        raise ParseError("no method body block found") from None
    rbrace = find_matching(lbrace, "{", "}")
    if rbrace != len(toks) - 1:
        raise ParseError(f"trailing tokens after method body at position {toks[rbrace + 1].pos}")

    root = b.node("MethodDecl")
    for i in range(lparen):
        b.children[root].append(b.leaf(_TOKEN_LEAF_KIND[toks[i].kind], i))
    param = b.node("ParamList")
    b.children[root].append(param)
    for i in range(lparen, rparen + 1):
        b.children[param].append(b.leaf(_TOKEN_LEAF_KIND[toks[i].kind], i))
    b.children[root].append(_parse_block(b, toks, lbrace, rbrace))

    tree = AstTree(b.kinds, b.children, root, b.leaf_token)
    if len(tree.leaf_token) != len(toks):
        raise ParseError(
            f"leaf/token mismatch: {len(tree.leaf_token)} leaves vs {len(toks)} tokens"
        )
    return tree


def _parse_block(b: _TreeBuilder, toks, lbrace: int, rbrace: int) -> int:
    block = b.node("Block")
    b.children[block].append(b.leaf("Operator", lbrace))
    i = lbrace + 1
    while i < rbrace:
        stmt = b.node("Statement")
        b.children[block].append(stmt)
        i = _parse_statement(b, toks, stmt, i, rbrace)
    b.children[block].append(b.leaf("Operator", rbrace))
    return block


def _parse_statement(b: _TreeBuilder, toks, stmt: int, i: int, end: int) -> int:
    """Consume one statement starting at i (< end); returns the index after it.
    A statement runs to the ';' at depth 0, or is a brace-delimited construct."""
    expr = None
    depth = 0
    while i < end:
        s = toks[i].surface
        if s == "{" and depth == 0:
            close = _match_forward(toks, i, "{", "}", end)
            b.children[stmt].append(_parse_block(b, toks, i, close))
            i = close + 1
            # constructs like if(..){..} else {..}: keep trailing else in same stmt
            if i < end and toks[i].surface == "else":
                continue
            return i
        if expr is None:
            expr = b.node("Expr")
            b.children[stmt].append(expr)
        if s == "(":
            depth += 1
        elif s == ")":
            depth -= 1
            if depth < 0:
                raise ParseError(f"unmatched ')' at position {toks[i].pos}")
        kind = _TOKEN_LEAF_KIND[toks[i].kind]
        if (
            toks[i].kind == "identifier"
            and i + 1 < end
            and toks[i + 1].surface == "("
        ):
            call = b.node("Call")
            b.children[expr].append(call)
            b.children[call].append(b.leaf("Name", i))
        else:
            b.children[expr].append(b.leaf(kind, i))
        if s == ";" and depth == 0:
            return i + 1
        i += 1
    if depth != 0:
        raise ParseError("unterminated statement: unbalanced parentheses")
    return i


def _match_forward(toks, open_idx: int, open_s: str, close_s: str, end: int) -> int:
    depth = 0
    for j in range(open_idx, end + 1):
        if toks[j].surface == open_s:
            depth += 1
        elif toks[j].surface == close_s:
            depth -= 1
            if depth == 0:
                return j
    raise ParseError(f"unmatched {open_s!r} at position {toks[open_idx].pos}")


# ---------------------------------------------------------------------------
# subtoken splitting


_SUBTOKEN_RE = re.compile(
    r"[0-9]+"            # digit runs
    r"|[A-Z]+(?![a-z])"  # acronym run not followed by a lowercase continuation
    r"|[A-Z][a-z]+"      # capitalized word
    r"|[a-z]+"           # lowercase run
)


def split_subtokens(surface: str, kind: str = "identifier") -> list[str]:
    if kind != "identifier":
        return [surface.lower()]
    parts = _SUBTOKEN_RE.findall(surface)
    if not parts:
        return [surface.lower()]
    return [p.lower() for p in parts]


# ---------------------------------------------------------------------------
# graph construction


def _method_name_token_index(seq: TokenSeq) -> int:
    """The declared name is the identifier immediately before the first '('."""
    for i, t in enumerate(seq.tokens):
        if t.surface == "(" and i > 0 and seq.tokens[i - 1].kind == "identifier":
            return i - 1
    raise ParseError("cannot locate method name (no identifier before '(')")


def build_graph(record: MethodRecord) -> CodeGraph:
    seq = tokenize_method(record.body)
    tree = parse_method(seq)
    name_idx = _method_name_token_index(seq)
    name_surface = seq.tokens[name_idx].surface

    nodes: list[GraphNode] = []
    edges: dict[str, list[tuple[int, int]]] = {t: [] for t in FORWARD_EDGE_TYPES}
    masked: list[int] = []

    # token nodes, in source order
    token_node: list[int] = []
    for i, tok in enumerate(seq.tokens):
        if tok.kind == "identifier" and tok.surface == name_surface:
            surface = NAME_MASK
            masked.append(len(nodes))
        else:
            surface = tok.surface
        nodes.append(GraphNode(surface, True, False, False))
        token_node.append(len(nodes) - 1)
    for a, c in zip(token_node, token_node[1:]):
        edges["next_token"].append((a, c))

    # subtoken nodes for identifiers (masked tokens get none)
    for i, tok in enumerate(seq.tokens):
        nid = token_node[i]
        if nodes[nid].surface == NAME_MASK:
            continue
        if tok.kind != "identifier":
            continue
        subs = split_subtokens(tok.surface)
        if len(subs) == 1 and subs[0] == tok.surface:
            # token is already subtoken-shaped; it is its own candidate
            nodes[nid].is_candidate = True
            continue
        for s in subs:
            nodes.append(GraphNode(s, True, True, True))
            edges["sub_token"].append((nid, len(nodes) - 1))

    # last lexical use: successive uses of the same identifier surface
    last_use: dict[str, int] = {}
    for i, tok in enumerate(seq.tokens):
        if tok.kind != "identifier":
            continue
        key = nodes[token_node[i]].surface
        if key in last_use:
            edges["last_lexical_use"].append((token_node[i], last_use[key]))
        last_use[key] = token_node[i]

    # parse-tree internal nodes; leaves collapse onto their token nodes
    ast_node: dict[int, int] = {}
    for t_id, kind in enumerate(tree.kinds):
        if t_id in tree.leaf_token:
            ast_node[t_id] = token_node[tree.leaf_token[t_id]]
        else:
            nodes.append(GraphNode(kind, False, False, False))
            ast_node[t_id] = len(nodes) - 1
    for t_id, kids in enumerate(tree.children):
        for k in kids:
            edges["child"].append((ast_node[t_id], ast_node[k]))

    for t in FORWARD_EDGE_TYPES:
        edges[f"reverse_{t}"] = [(dst, src) for src, dst in edges[t]]

    graph = CodeGraph(nodes, edges, masked,
                      name_subtokens=list(record.name_subtokens),
                      method_id=record.method_id)
    return label_keywords(graph, record.name_subtokens)


def build_graph_from_record(rec: dict) -> CodeGraph:
    """Pre-parsed ingestion: explicit node/edge lists instead of source."""
    try:
        nodes = [
            GraphNode(n["surface"], bool(n["is_lexical"]),
                      bool(n.get("is_subtoken", False)),
                      bool(n.get("is_candidate", False)))
            for n in rec["nodes"]
        ]
        raw_edges = rec["edges"]
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed pre-parsed record: {e}") from e
    edges: dict[str, list[tuple[int, int]]] = {t: [] for t in FORWARD_EDGE_TYPES}
    for etype, pairs in raw_edges.items():
        if etype not in FORWARD_EDGE_TYPES:
            raise DataError(f"unknown edge type {etype!r}")
        for s, d in pairs:
            if not (0 <= s < len(nodes) and 0 <= d < len(nodes)):
                raise DataError(f"edge endpoint out of range in type {etype!r}")
            edges[etype].append((int(s), int(d)))
    for t in FORWARD_EDGE_TYPES:
        edges[f"reverse_{t}"] = [(d, s) for s, d in edges[t]]
    graph = CodeGraph(nodes, edges, list(rec.get("masked", [])),
                      name_subtokens=[str(s) for s in rec.get("name_subtokens", [])],
                      method_id=str(rec.get("id", "")))
    return label_keywords(graph, graph.name_subtokens)


def label_keywords(graph: CodeGraph, name_subtokens: list[str]) -> CodeGraph:
    wanted = {s.lower() for s in name_subtokens}
    graph.keyword_labels = [
        1 if (n.is_lexical and n.surface.lower() in wanted) else 0
        for n in graph.nodes
    ]
    return graph


# ---------------------------------------------------------------------------
# corpus-level helpers


def body_subtokens(record: MethodRecord) -> list[str]:
    """Identifier subtokens of the body in source order (declared name masked)."""
    seq = tokenize_method(record.body)
    name_idx = _method_name_token_index(seq)
    name_surface = seq.tokens[name_idx].surface
    out: list[str] = []
    for tok in seq.tokens:
        if tok.kind != "identifier" or tok.surface == name_surface:
            continue
        out.extend(split_subtokens(tok.surface))
    return out


def shared_token_count(record: MethodRecord) -> int:
    body = set(body_subtokens(record))
    return sum(1 for s in set(record.name_subtokens) if s in body)


def shared_token_stats(corpus: list[MethodRecord]) -> tuple[float, dict[str, int]]:
    """Fraction of name subtokens found in the body, plus a histogram of
    methods by shared-token count (buckets 0,1,2,3,>=4)."""
    if not corpus:
        raise DataError("empty corpus")
    found = 0
    total = 0
    buckets = {"0": 0, "1": 0, "2": 0, "3": 0, ">=4": 0}
    for rec in corpus:
        body = set(body_subtokens(rec))
        names = list(dict.fromkeys(rec.name_subtokens))
        k = sum(1 for s in names if s in body)
        found += k
        total += len(names)
        buckets[str(k) if k < 4 else ">=4"] += 1
    return found / total, buckets


# ---------------------------------------------------------------------------
# serialization (one JSON object per line)


def serialize_graph(graph: CodeGraph) -> str:
    rec = {
        "id": graph.method_id,
        "nodes": [
            [n.surface, int(n.is_lexical), int(n.is_subtoken), int(n.is_candidate)]
            for n in graph.nodes
        ],
        "edges": {t: [list(e) for e in graph.edges[t]] for t in FORWARD_EDGE_TYPES},
        "masked": graph.masked_name_positions,
        "labels": graph.keyword_labels,
        "name_subtokens": graph.name_subtokens,
    }
    return json.dumps(rec, sort_keys=True)


def deserialize_graph(line: str, lineno: int = 0) -> CodeGraph:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"line {lineno}: invalid record: {e}") from e
    try:
        nodes = [GraphNode(s, bool(lx), bool(st), bool(cd))
                 for s, lx, st, cd in rec["nodes"]]
        edges = {}
        for etype, pairs in rec["edges"].items():
            if etype not in FORWARD_EDGE_TYPES:
                raise DataError(f"line {lineno}: unknown edge type {etype!r}")
            edges[etype] = [(int(s), int(d)) for s, d in pairs]
        for t in FORWARD_EDGE_TYPES:
            edges.setdefault(t, [])
            edges[f"reverse_{t}"] = [(d, s) for s, d in edges[t]]
        graph = CodeGraph(
            nodes, edges, [int(i) for i in rec["masked"]],
            keyword_labels=[int(v) for v in rec["labels"]] if rec.get("labels") is not None else None,
            name_subtokens=[str(s) for s in rec.get("name_subtokens", [])],
            method_id=str(rec.get("id", "")),
        )
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"line {lineno}: truncated or malformed record: {e}") from e
    return graph


def read_method_records(path) -> list[MethodRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append(MethodRecord(
                    body=rec["body"],
                    name_subtokens=[s.lower() for s in rec["name_subtokens"]],
                    project=rec.get("project", ""),
                    split=rec.get("split", "train"),
                    method_id=str(rec.get("id", lineno)),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"line {lineno}: bad method record: {e}") from e
    if not records:
        raise DataError(f"no records in {path}")
    return records
