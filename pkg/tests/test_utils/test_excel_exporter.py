import math
import zipfile

import pytest

from utils.data_handling.excel_exporter import ExcelExporter
from utils.exceptions import ValidationException

ROWS = [
    {"setting": "scale=0.0", "psnr_y": 22.5, "ssim_y": 0.61},
    {"setting": "scale=1.0", "psnr_y": math.inf, "ssim_y": 1.0},
]


class TestExcelExporter:
    def test_writes_workbook(self, tmp_path):
        path = ExcelExporter.export_table(ROWS, ["setting", "psnr_y", "ssim_y"], tmp_path / "out" / "sweep.xlsx", sheet_name="guidance_scale")
        assert path.exists()
        with zipfile.ZipFile(path) as archive:
            workbook = archive.read("xl/workbook.xml").decode("utf-8")
            strings = archive.read("xl/sharedStrings.xml").decode("utf-8")
        assert "guidance_scale" in workbook
        # infinities are written as text cells
        assert ">inf<" in strings

    def test_empty_rows(self, tmp_path):
        with pytest.raises(ValidationException):
            ExcelExporter.export_table([], ["setting"], tmp_path / "empty.xlsx")

    def test_missing_column(self, tmp_path):
        with pytest.raises(ValidationException):
            ExcelExporter.export_table(ROWS, ["setting", "lpips"], tmp_path / "bad.xlsx")
