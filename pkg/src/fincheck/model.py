"""Corpus data model: documents, tables, provenance and citations."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Optional, Union

from .numbers import FiscalPeriod, NumericValue, PeriodKind, UNSPECIFIED

HEADER_SEP = " / "


class ElementType(str, enum.Enum):
    PARAGRAPH = "paragraph"
    HEADING = "heading"
    LIST = "list"
    TABLE = "table"
    TABLE_CELL = "table_cell"


@dataclass(frozen=True)
class CellAddress:
    table_id: str
    row_label: str
    col_label: str
    row_index: int
    col_index: int


@dataclass(frozen=True)
class ProvenanceTuple:
    document_id: str
    section_id: str
    page: int
    element_type: ElementType
    cell: Optional[CellAddress] = None

    def __post_init__(self):
        if not self.document_id or not self.section_id:
            raise ValueError("provenance fields must be non-empty")
        if self.page < 1:
            raise ValueError("page must be positive")
        if (self.element_type is ElementType.TABLE_CELL) != (self.cell is not None):
            raise ValueError("table_cell provenance requires a cell address (and only then)")

    def to_json(self) -> dict:
        out = {"document": self.document_id, "section": self.section_id,
               "page": self.page, "element_type": self.element_type.value}
        if self.cell:
            out["cell"] = {"table": self.cell.table_id, "row": self.cell.row_label,
                           "col": self.cell.col_label, "row_index": self.cell.row_index,
                           "col_index": self.cell.col_index}
        return out


@dataclass(frozen=True)
class Cell:
    raw_text: str
    parsed: Optional[NumericValue] = None
    period: FiscalPeriod = UNSPECIFIED


@dataclass(frozen=True)
class TableStructure:
    table_id: str
    caption: str
    col_headers: tuple[str, ...]
    row_headers: tuple[str, ...]
    cells: tuple[tuple[Cell, ...], ...]
    page: int = 1
    section_id: str = ""
    col_paths: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if len(self.cells) != len(self.row_headers):
            raise ValueError("row count differs from row headers")
        for row in self.cells:
            if len(row) != len(self.col_headers):
                raise ValueError("table grid is not rectangular")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_headers), len(self.col_headers)

    def address(self, r: int, c: int) -> CellAddress:
        return CellAddress(self.table_id, self.row_headers[r], self.col_headers[c], r, c)


@dataclass(frozen=True)
class Paragraph:
    text: str
    page: int


@dataclass(frozen=True)
class Section:
    section_id: str
    heading: str
    page: int
    paragraphs: tuple[Paragraph, ...]


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    filing_date: date
    sections: tuple[Section, ...]
    tables: tuple[TableStructure, ...] = ()
    company: str = ""

    def section(self, section_id: str) -> Optional[Section]:
        return next((s for s in self.sections if s.section_id == section_id), None)

    def table(self, table_id: str) -> Optional[TableStructure]:
        return next((t for t in self.tables if t.table_id == table_id), None)

    @property
    def fiscal_year(self) -> Optional[int]:
        """Latest fiscal year reported in the tables, else the year before filing."""
        years = [
            cell.period.year
            for t in self.tables for row in t.cells for cell in row
            if cell.period.kind in (PeriodKind.FISCAL_YEAR, PeriodKind.QUARTER)
        ]
        return max(years) if years else self.filing_date.year - 1

    @property
    def entity_names(self) -> tuple[str, ...]:
        names = [self.company] if self.company else []
        names.append(self.title)
        return tuple(n for n in names if n)


# ---------------------------------------------------------------------------
# citations

@dataclass(frozen=True)
class ParagraphCitation:
    doc: str
    section: str
    page: int

    @property
    def rendered(self) -> str:
        return f"[Doc:{self.doc}, §{self.section}, p.{self.page}]"

    def key(self):
        return ("paragraph", self.doc, self.section, self.page)


@dataclass(frozen=True)
class TableCellCitation:
    doc: str
    table: str
    row_label: str
    col_label: str
    row_index: Optional[int] = field(default=None, compare=False)
    col_index: Optional[int] = field(default=None, compare=False)

    @property
    def rendered(self) -> str:
        return f"[Doc:{self.doc}, Table {self.table}, Row: {self.row_label}, Col: {self.col_label}]"

    def key(self):
        return ("table_cell", self.doc, self.table, self.row_label, self.col_label)


Citation = Union[ParagraphCitation, TableCellCitation]

_PARA_CITE = re.compile(r"\[Doc:\s?(?P<doc>[^,\]]+), §(?P<section>[^,\]]+), p\.(?P<page>\d+)\]")
_CELL_CITE = re.compile(
    r"\[Doc:\s?(?P<doc>[^,\]]+), Table (?P<table>[^,\]]+), Row: (?P<row>[^\]]+?), Col: (?P<col>[^\]]+)\]"
)


def parse_citation(text: str) -> Citation:
    text = text.strip()
    m = _PARA_CITE.fullmatch(text)
    if m:
        return ParagraphCitation(m["doc"], m["section"], int(m["page"]))
    m = _CELL_CITE.fullmatch(text)
    if m:
        return TableCellCitation(m["doc"], m["table"], m["row"], m["col"])
    raise ValueError(f"not a citation: {text!r}")


def find_citations(text: str) -> list[tuple[int, int, Citation]]:
    out = []
    for pattern in (_PARA_CITE, _CELL_CITE):
        for m in pattern.finditer(text):
            out.append((m.start(), m.end(), parse_citation(m.group(0))))
    return sorted(out, key=lambda t: t[0])


def strip_citations(text: str) -> str:
    """Blank out citation markers, keeping character offsets stable."""
    chars = list(text)
    for s, e, _ in find_citations(text):
        for i in range(s, e):
            chars[i] = " "
    return "".join(chars)


def citation_from_provenance(prov: ProvenanceTuple) -> Citation:
    if prov.cell is not None:
        c = prov.cell
        return TableCellCitation(prov.document_id, c.table_id, c.row_label, c.col_label,
                                 c.row_index, c.col_index)
    return ParagraphCitation(prov.document_id, prov.section_id, prov.page)
