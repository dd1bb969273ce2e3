"""Parse the three supported OCR formats into the common token model.

Run: python3 demos/01_ingest_ocr_formats.py
"""

import json

from docstruct.ocr_ingest import (
    parse_alto,
    parse_hocr,
    parse_tokens_json,
    serialize_tokens_json,
)

HOCR = b"""
<html><body>
 <div class="ocr_page" id="page_1" title="bbox 0 0 400 600">
  <span class="ocrx_word" id="w1" title="bbox 20 30 90 50; x_wconf 96">Quarterly</span>
  <span class="ocrx_word" id="w2" title="bbox 95 30 150 50; x_wconf 93">report</span>
 </div>
</body></html>
"""

ALTO = b"""<?xml version="1.0"?>
<alto xmlns="http://www.loc.gov/standards/alto/ns-v3#"><Layout>
 <Page ID="P1" WIDTH="400" HEIGHT="600"><PrintSpace><TextBlock><TextLine>
  <String ID="s1" CONTENT="Quarterly" HPOS="20" VPOS="30" WIDTH="70" HEIGHT="20"/>
  <String ID="s2" CONTENT="report" HPOS="95" VPOS="30" WIDTH="55" HEIGHT="20"/>
 </TextLine></TextBlock></PrintSpace></Page>
</Layout></alto>
"""


def main():
    pages_hocr, report = parse_hocr(HOCR)
    print(f"hOCR: {report.pages_parsed} page(s), {report.tokens_parsed} token(s)")
    for t in pages_hocr[0].tokens:
        print(f"  {t.text!r} at {t.box} conf={t.confidence}")

    pages_alto, _ = parse_alto(ALTO)
    print(f"ALTO: same words -> {[t.text for t in pages_alto[0].tokens]}")

    # everything serializes to the interchange tokens-JSON and parses back
    blob = serialize_tokens_json(pages_hocr)
    reparsed, _ = parse_tokens_json(blob)
    assert reparsed == pages_hocr
    print("tokens-JSON round trip OK:")
    print(json.dumps(json.loads(blob), indent=2)[:400], "...")


if __name__ == "__main__":
    main()
