# -*- coding: utf-8 -*-
"""
Word styles for run reports.

Reports use Word's built-in styles (Title, Heading 1, Caption, ...) restyled
once per document, so a report can be restyled in Word afterwards and every
element follows. Tables are metric tables: numbers right-aligned, a shaded
header row and optional highlighted rows.
"""

import logging
from pathlib import Path

from docx import Document
from docx.enum.section import WD_ORIENT
from docx.enum.table import WD_ROW_HEIGHT_RULE
from docx.enum.text import WD_ALIGN_PARAGRAPH
from docx.oxml import OxmlElement
from docx.oxml.ns import qn
from docx.shared import Cm, Pt, RGBColor

logger = logging.getLogger(__name__)


# =============================================================================
# CONSTANTS
# =============================================================================

FONT_PRIMARY = 'Aptos'
FONT_DISPLAY = 'Aptos Display'

SIZE_BODY = Pt(10.5)
SIZE_TABLE = Pt(8.5)
SIZE_SMALL = Pt(8.5)

# A4 portrait
PAGE_WIDTH = Cm(21)
PAGE_HEIGHT = Cm(29.7)
PAGE_MARGIN = Cm(1.8)
CONTENT_WIDTH_CM = 17.4
FIGURE_WIDTH = Cm(15)

CELL_PADDING = Cm(0.1)
EN_DASH = "–"

# Report palette: text colours plus table shading fills (hex)
PALETTE = {
    'text': RGBColor(30, 30, 30),
    'heading': RGBColor(23, 54, 93),
    'muted': RGBColor(110, 110, 110),
    'table_header_bg': 'DCE6F0',
    'highlight_bg': 'FFF2CC',
}


# =============================================================================
# STYLE NAMES - Word's built-in styles (modified at document creation)
# =============================================================================

STYLE_TITLE = 'Title'
STYLE_SUBTITLE = 'Subtitle'
STYLE_HEADING1 = 'Heading 1'
STYLE_HEADING2 = 'Heading 2'
STYLE_BODY = 'Normal'
STYLE_CAPTION = 'Caption'

# style -> (font, size, bold, italic, alignment, space before, space after)
STYLE_SPECS = {
    STYLE_TITLE: (FONT_DISPLAY, Pt(18), True, False, WD_ALIGN_PARAGRAPH.CENTER, Pt(6), Pt(4)),
    STYLE_SUBTITLE: (FONT_PRIMARY, Pt(12), False, False, WD_ALIGN_PARAGRAPH.CENTER, Pt(0), Pt(14)),
    STYLE_HEADING1: (FONT_DISPLAY, Pt(15), True, False, WD_ALIGN_PARAGRAPH.LEFT, Pt(14), Pt(6)),
    STYLE_HEADING2: (FONT_DISPLAY, Pt(12), True, False, WD_ALIGN_PARAGRAPH.LEFT, Pt(10), Pt(4)),
    STYLE_CAPTION: (FONT_PRIMARY, SIZE_SMALL, False, True, WD_ALIGN_PARAGRAPH.CENTER, Pt(2), Pt(12)),
}


# =============================================================================
# DOCUMENT SETUP WITH STYLES
# =============================================================================

def setup_document():
    """
    New A4 report document with the report styles applied.

    Returns:
        Document: with the palette attached as `doc.colours`.
    """
    doc = Document()
    doc.colours = PALETTE

    section = doc.sections[0]
    section.orientation = WD_ORIENT.PORTRAIT
    section.page_width, section.page_height = PAGE_WIDTH, PAGE_HEIGHT
    for side in ('left_margin', 'right_margin', 'top_margin', 'bottom_margin'):
        setattr(section, side, PAGE_MARGIN)

    _create_styles(doc)
    return doc


def _create_styles(doc):
    normal = doc.styles[STYLE_BODY]
    normal.font.name = FONT_PRIMARY
    normal.font.size = SIZE_BODY
    normal.font.color.rgb = PALETTE['text']
    normal.paragraph_format.space_after = Pt(4)
    normal.paragraph_format.line_spacing = 1.1

    for name, (font, size, bold, italic, align, before, after) in STYLE_SPECS.items():
        style = doc.styles[name]
        style.font.name = font
        style.font.size = size
        style.font.bold = bold
        style.font.italic = italic
        style.font.underline = False
        style.font.color.rgb = PALETTE['muted'] if name == STYLE_CAPTION else PALETTE['heading']
        style.paragraph_format.alignment = align
        style.paragraph_format.space_before = before
        style.paragraph_format.space_after = after
        _set_style_font_xml(style, font)
        if name in (STYLE_TITLE, STYLE_SUBTITLE):
            _remove_style_borders(style)


def add_header_footer(doc, run_name, doc_type="Run Report"):
    """Header "<run name> - <doc type>" on the left, page number in the footer."""
    section = doc.sections[0]

    header_para = section.header.paragraphs[0]
    header_para.clear()
    run = header_para.add_run(f"{run_name} - {doc_type}" if doc_type else str(run_name))
    run.font.size = SIZE_SMALL
    run.font.color.rgb = PALETTE['muted']

    footer_para = section.footer.paragraphs[0]
    footer_para.clear()
    footer_para.alignment = WD_ALIGN_PARAGRAPH.RIGHT
    # PAGE field: begin / instruction / end, each in its own run
    for element, attrs, text in (
        ('w:fldChar', {'w:fldCharType': 'begin'}, None),
        ('w:instrText', {'xml:space': 'preserve'}, " PAGE "),
        ('w:fldChar', {'w:fldCharType': 'end'}, None),
    ):
        node = OxmlElement(element)
        for key, value in attrs.items():
            node.set(qn(key), value)
        if text:
            node.text = text
        run_element = OxmlElement('w:r')
        run_element.append(node)
        footer_para._p.append(run_element)


# =============================================================================
# TITLES AND HEADINGS
# =============================================================================

def add_title(doc, text):
    return doc.add_paragraph(text, style=STYLE_TITLE)


def add_subtitle(doc, text):
    return doc.add_paragraph(text, style=STYLE_SUBTITLE)


def add_section_heading(doc, text):
    """Add a section heading (Heading 1)."""
    return doc.add_paragraph(text, style=STYLE_HEADING1)


def add_subsection_heading(doc, text):
    """Add a subsection heading (Heading 2)."""
    return doc.add_paragraph(text, style=STYLE_HEADING2)


# =============================================================================
# TABLES
# =============================================================================

def _format_value(value, digits=4):
    if value is None:
        return EN_DASH
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def add_key_value_table(doc, data):
    """
    Two-column table of labelled values (run settings, headline metrics).

    Args:
        doc: Document object
        data: List of (key, value) pairs or a dict

    Returns:
        Table object
    """
    pairs = list(data.items()) if isinstance(data, dict) else list(data)
    table = doc.add_table(rows=len(pairs), cols=2)
    table.style = 'Table Grid'
    table.autofit = False

    longest = max((len(str(key)) for key, _ in pairs), default=0)
    key_width = min(max(0.19 * longest + 0.6, 2.5), 7.0)
    for row, (key, value) in zip(table.rows, pairs):
        row.height_rule = WD_ROW_HEIGHT_RULE.AUTO
        key_cell, value_cell = row.cells
        _write_cell(key_cell, str(key), bold=True, fill=PALETTE['table_header_bg'])
        _write_cell(value_cell, _format_value(value))
        key_cell.width = Cm(key_width)
        value_cell.width = Cm(CONTENT_WIDTH_CM - key_width)
    return table


def add_content_table(doc, headers, rows, header_bg=True, highlight_rows=()):
    """
    Metric table with a header row; numeric cells are right-aligned.

    Args:
        doc: Document object
        headers: Column titles
        rows: Row values; floats print with four decimals, None as a dash
        header_bg: Shade the header row
        highlight_rows: Data-row indices to shade (e.g. the reporting threshold)

    Returns:
        Table object
    """
    table = doc.add_table(rows=len(rows) + 1, cols=len(headers))
    table.style = 'Table Grid'
    header_fill = PALETTE['table_header_bg'] if header_bg else None
    for cell, title in zip(table.rows[0].cells, headers):
        _write_cell(cell, str(title), bold=True, align=WD_ALIGN_PARAGRAPH.CENTER, fill=header_fill)

    for index, (table_row, values) in enumerate(zip(table.rows[1:], rows)):
        table_row.height_rule = WD_ROW_HEIGHT_RULE.AUTO
        fill = PALETTE['highlight_bg'] if index in highlight_rows else None
        for cell, value in zip(table_row.cells, values):
            numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
            align = WD_ALIGN_PARAGRAPH.RIGHT if numeric else WD_ALIGN_PARAGRAPH.LEFT
            _write_cell(cell, _format_value(value), align=align, fill=fill)
    return table


def _write_cell(cell, text, bold=False, align=WD_ALIGN_PARAGRAPH.LEFT, fill=None):
    para = cell.paragraphs[0]
    para.alignment = align
    fmt = para.paragraph_format
    fmt.space_before, fmt.space_after, fmt.line_spacing = Pt(0), Pt(0), 1.0
    run = para.add_run(text)
    run.bold = bold
    run.font.size = SIZE_TABLE

    tcPr = cell._tc.get_or_add_tcPr()
    margins = OxmlElement('w:tcMar')
    for side in ('top', 'left', 'bottom', 'right'):
        margin = OxmlElement(f'w:{side}')
        margin.set(qn('w:w'), str(int(CELL_PADDING.twips)))
        margin.set(qn('w:type'), 'dxa')
        margins.append(margin)
    tcPr.append(margins)
    v_align = OxmlElement('w:vAlign')
    v_align.set(qn('w:val'), 'center')
    tcPr.append(v_align)
    if fill:
        shading = OxmlElement('w:shd')
        shading.set(qn('w:val'), 'clear')
        shading.set(qn('w:fill'), fill)
        tcPr.append(shading)


# =============================================================================
# TEXT, FIGURES AND BREAKS
# =============================================================================

def add_body_paragraph(doc, text, bold=False, italic=False):
    para = doc.add_paragraph(style=STYLE_BODY)
    run = para.add_run(text)
    run.bold, run.italic = bold, italic
    return para


def add_caption(doc, text, figure_number=None):
    return doc.add_paragraph(f"Figure {figure_number}: {text}" if figure_number else text, style=STYLE_CAPTION)


def add_figure(doc, image_path, caption, figure_number=None, width=FIGURE_WIDTH):
    """
    Insert a PNG figure, centred, followed by its caption.

    A missing image leaves a placeholder line instead of failing the report.
    """
    image_path = Path(image_path)
    if not image_path.exists():
        logger.warning("Figure not found, skipped: %s", image_path)
        return add_body_paragraph(doc, f"[missing figure: {image_path.name}]", italic=True)
    para = doc.add_paragraph()
    para.alignment = WD_ALIGN_PARAGRAPH.CENTER
    para.add_run().add_picture(str(image_path), width=width)
    return add_caption(doc, caption, figure_number)


def add_page_break(doc):
    doc.add_page_break()


# =============================================================================
# STYLE HELPERS
# =============================================================================

def _remove_style_borders(style):
    """Title and Subtitle carry paragraph borders in some Word templates."""
    pPr = style.element.get_or_add_pPr()
    borders = OxmlElement('w:pBdr')
    for side in ('top', 'left', 'bottom', 'right', 'between', 'bar'):
        border = OxmlElement(f'w:{side}')
        border.set(qn('w:val'), 'nil')
        borders.append(border)
    pPr.append(borders)


def _set_style_font_xml(style, font_name):
    """Style font for every script (ascii, hAnsi, eastAsia, cs)."""
    rPr = style.element.get_or_add_rPr()
    for existing in rPr.findall(qn('w:rFonts')):
        rPr.remove(existing)
    fonts = OxmlElement('w:rFonts')
    for attr in ('w:ascii', 'w:hAnsi', 'w:eastAsia', 'w:cs'):
        fonts.set(qn(attr), font_name)
    rPr.insert(0, fonts)


def save_document(doc, filepath):
    doc.save(str(filepath))
    logger.info("Report saved: %s", filepath)
