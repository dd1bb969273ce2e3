"""Geometric layout analysis on a synthetic page.

Builds a page with a title, a prose paragraph, a 3x3 table and a large
empty region with a caption underneath, then prints the recovered layout
tree in reading order.

Run: python3 demos/02_layout_analysis.py
"""

from docstruct.doc_model import BoundingBox, FigureRegion, OcrPage, OcrToken, Table, TextBlock
from docstruct.layout_analysis import LayoutParams, analyze


def tok(text, x0, y0, x1, y1, font=None):
    return OcrToken(text=text, box=BoundingBox(x0, y0, x1, y1),
                    font_size_hint=font)


def build_page():
    tokens = []
    for c, word in enumerate(["Annual", "Report", "2024"]):
        x0 = 40 + c * 150
        tokens.append(tok(word, x0, 20, x0 + 145, 40, font=20))
    starts = [[40, 120, 185, 260, 330, 420],
              [40, 98, 170, 243, 310, 390],
              [40, 132, 210, 296, 375, 440]]
    for li, row in enumerate(starts):
        y = 56 + li * 24
        for wi, x0 in enumerate(row):
            x1 = (row[wi + 1] - 5) if wi + 1 < len(row) else x0 + 45
            tokens.append(tok(f"word{li}{wi}", x0, y, x1, y + 16, font=10))
    for r in range(3):
        for c in range(3):
            x0 = 40 + c * 150
            y0 = 136 + r * 24
            tokens.append(tok(f"cell{r}{c}", x0, y0, x0 + 145, y0 + 16, font=10))
    x = 40
    for word in ["Figure", "1:", "traffic", "by", "region"]:
        tokens.append(tok(word, x, 380, x + 46, 392, font=10))
        x += 48
    for li, row in enumerate(starts):
        y = 408 + li * 24
        for wi, x0 in enumerate(row):
            x1 = (row[wi + 1] - 5) if wi + 1 < len(row) else x0 + 45
            tokens.append(tok(f"tail{li}{wi}", x0, y, x1, y + 16, font=10))
    return OcrPage(page_id="page_1", width=512, height=512,
                   tokens=tuple(tokens))


def main():
    page = build_page()
    tree = analyze(page, LayoutParams())
    print(f"{len(page.tokens)} tokens -> {len(tree.leaves_in_reading_order())} blocks\n")
    for leaf in tree.leaves_in_reading_order():
        if isinstance(leaf, TextBlock):
            print(f"[{leaf.reading_rank}] {leaf.role:<10} {leaf.text[:52]!r}")
        elif isinstance(leaf, Table):
            print(f"[{leaf.reading_rank}] table      "
                  f"{leaf.n_rows}x{leaf.n_cols}, "
                  f"top-left={leaf.cell_text(0, 0)!r}")
        elif isinstance(leaf, FigureRegion):
            print(f"[{leaf.reading_rank}] figure     box={leaf.box} "
                  f"caption={leaf.nearby_caption!r}")
    print(f"\ntoken coverage: {tree.covers(page)}")


if __name__ == "__main__":
    main()
