import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import xlsxwriter
from xlsxwriter.exceptions import XlsxWriterException

from utils.decorators import io_operation
from utils.exceptions import FileOperationException, ValidationException
from utils.system.logger import logger


def _cell(value: Any) -> Any:
    # spreadsheet cells cannot hold IEEE infinities
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


class ExcelExporter:
    @staticmethod
    @io_operation()
    def export_table(
        data: Sequence[Dict[str, Any]],
        headers: List[str],
        filename: Union[str, Path],
        sheet_name: str = "Sheet1",
        auto_adjust_columns: bool = True,
    ) -> Path:
        """
        Export metric rows to an Excel file.

        Args:
            data: One dictionary per row, keyed by header.
            headers: Column order for the sheet.
            filename: Target ``.xlsx`` path; parent directories are created.
            sheet_name: Name of the worksheet.
            auto_adjust_columns: Whether to widen columns to their content.

        Raises:
            ValidationException: If the data is empty or a row lacks a header key.
            FileOperationException: If the workbook cannot be written.
        """
        if not data:
            raise ValidationException("No data to export")
        for row in data:
            if not set(headers) <= set(row.keys()):
                raise ValidationException("Headers don't match the data keys")

        path = Path(filename)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with xlsxwriter.Workbook(str(path)) as workbook:
                worksheet = workbook.add_worksheet(sheet_name)
                header_format = workbook.add_format({"bold": True, "bg_color": "#D3D3D3"})
                number_format = workbook.add_format({"num_format": "0.000000"})

                for col, header in enumerate(headers):
                    worksheet.write(0, col, header, header_format)

                for row_index, item in enumerate(data, start=1):
                    for col, key in enumerate(headers):
                        value = _cell(item[key])
                        if isinstance(value, float):
                            worksheet.write_number(row_index, col, value, number_format)
                        else:
                            worksheet.write(row_index, col, value)

                if auto_adjust_columns:
                    for col, header in enumerate(headers):
                        max_width = max(len(str(_cell(item[header]))) for item in data)
                        worksheet.set_column(col, col, max(len(header), max_width) + 2)
        except OSError as e:
            raise FileOperationException(f"Error writing to file {path}: {e}")
        except XlsxWriterException as e:
            raise FileOperationException(f"An error occurred while exporting to Excel: {e}")

        logger.info("Excel file created", extra={"path": path.resolve(), "rows": len(data)})
        return path
