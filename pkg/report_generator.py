"""
报告生成模块 - 负责把验证结果写成 Markdown 报告（jinja2 模板）与每表一个 CSV，
以及曲线数据 CSV（图形由外部工具绘制）
"""

import logging
import os
from typing import Dict, List, Optional

import pandas as pd
from jinja2 import Environment

from fdm_solver import CSV_FLOAT_FORMAT
from verify_harness import TableResult

logger = logging.getLogger(__name__)

TABLE_FLOAT_FORMAT = '%.6e'

REPORT_TEMPLATE = """# P2F 验证报告

{% if metadata %}
## 运行信息

| 项目 | 值 |
|---|---|
{% for key, value in metadata.items() -%}
| {{ key }} | {{ value }} |
{% endfor %}
{% endif %}
{% for result in results %}
## {{ result.title }} ({{ result.table }})

{% if result.error_message -%}
❌ 执行失败: {{ result.error_message }}
{% else -%}
{% for name, frame in result.frames.items() %}
{{ frame | markdown_table }}

CSV: `{{ name }}.csv`
{% endfor %}
| 判定项 | 数值 | 通过 |
|---|---|---|
{% for check in result.checks -%}
| {{ check.name }} | {{ '%.3e' | format(check.value) }} | {{ '✅' if check.passed else '❌' }} |
{% endfor %}
{% endif %}
{% endfor %}
## 总结

{{ passed }}/{{ results | length }} 个套件通过{% if failures %}，未通过项:
{% for failure in failures %}
- {{ failure }}
{%- endfor %}
{% else %}。{% endif %}
"""


def _markdown_table(frame: pd.DataFrame) -> str:
    """把 DataFrame 渲染为 Markdown 表格（浮点数取4位有效数字的科学计数）"""
    header = '| ' + ' | '.join(str(c) for c in frame.columns) + ' |'
    rule = '|' + '---|' * len(frame.columns)
    rows = []
    for record in frame.itertuples(index=False):
        cells = [f"{v:.3e}" if isinstance(v, float) else str(v) for v in record]
        rows.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join([header, rule] + rows)


class ReportGenerator:
    """报告生成器"""

    def __init__(self, output_dir: str = "reports"):
        """
        初始化报告生成器

        Args:
            output_dir: 输出目录
        """
        self.output_dir = output_dir
        self.ensure_output_dir()
        self.environment = Environment(trim_blocks=True, lstrip_blocks=True,
                                       keep_trailing_newline=True)
        self.environment.filters['markdown_table'] = _markdown_table

    def ensure_output_dir(self, subdir: Optional[str] = None) -> str:
        """确保输出目录存在"""
        path = os.path.join(self.output_dir, subdir) if subdir else self.output_dir
        if not os.path.exists(path):
            os.makedirs(path)
            logger.info(f"创建输出目录: {path}")
        return path

    def write_tables(self, results: List[TableResult]) -> List[str]:
        """每个表一个 CSV"""
        paths = []
        for result in results:
            for name, frame in result.frames.items():
                path = os.path.join(self.output_dir, f"{name}.csv")
                frame.to_csv(path, index=False, float_format=TABLE_FLOAT_FORMAT)
                paths.append(path)
        return paths

    def write_figure_data(self, results: List[TableResult]) -> List[str]:
        """曲线数据 CSV（全精度），写入 figures 子目录"""
        paths = []
        figures: Dict[str, pd.DataFrame] = {}
        for result in results:
            figures.update(result.figures)
        if not figures:
            return paths
        figure_dir = self.ensure_output_dir('figures')
        for name, frame in figures.items():
            path = os.path.join(figure_dir, f"{name}.csv")
            frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
            paths.append(path)
        logger.info(f"曲线数据已写出: {len(paths)} 个文件")
        return paths

    def render_markdown(self, results: List[TableResult],
                        metadata: Optional[Dict[str, object]] = None) -> str:
        """渲染 Markdown 报告文本"""
        failures = [failure for r in results for failure in r.failures]
        template = self.environment.from_string(REPORT_TEMPLATE)
        return template.render(
            metadata=metadata or {},
            results=results,
            passed=sum(1 for r in results if r.success),
            failures=failures,
        )

    def generate_report(self, results: List[TableResult],
                        metadata: Optional[Dict[str, object]] = None) -> str:
        """
        生成完整报告

        Args:
            results: 验证结果
            metadata: 运行信息（模型路径、配置摘要等）

        Returns:
            str: Markdown 报告路径
        """
        self.write_tables(results)
        self.write_figure_data(results)
        path = os.path.join(self.output_dir, 'report.md')
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.render_markdown(results, metadata))
        logger.info(f"验证报告已生成: {path}")
        return path


# 便利函数
def write_report(results: List[TableResult], out_dir: str,
                 metadata: Optional[Dict[str, object]] = None) -> str:
    """写出 Markdown 报告与各表 CSV，返回报告路径"""
    return ReportGenerator(out_dir).generate_report(results, metadata)
