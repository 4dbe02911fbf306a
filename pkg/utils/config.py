import configparser
import os
import re
from typing import Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from bulkflow.core.errors import ParseError, ValidationError
from utils import logger

load_dotenv()


class Config:
    """默认运行参数，读取自 config.ini"""

    def __init__(self):
        self.config = configparser.ConfigParser()

        # 查找配置文件的多个可能位置
        config_paths = [
            # 1. 环境变量指定的路径
            os.environ.get('BULKFLOW_CONFIG_PATH'),
            # 2. 当前工作目录
            os.path.join(os.getcwd(), 'config.ini'),
            # 3. 项目根目录 (utils目录的上层)
            os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config.ini'),
            # 4. 用户主目录
            os.path.join(os.path.expanduser("~"), '.bulkflow', 'config.ini')
        ]

        self.config_path = None
        for path in [p for p in config_paths if p]:
            if os.path.exists(path):
                self.config.read(path, encoding='utf-8')
                self.config_path = path
                break
        if self.config_path:
            logger.info(f"已加载配置文件: {self.config_path}")
        else:
            logger.warning("未找到 config.ini，使用内置默认值")

        # 求解器配置
        self.LINEAR_SOLVER = self._get('solver', 'linear_solver', 'direct')
        self.PICARD_TOL = self._getfloat('solver', 'picard_tol', 1e-8)
        self.PICARD_MAX_ITER = self._getint('solver', 'picard_max_iter', 50)
        self.PICARD_RELAXATION = self._getfloat('solver', 'picard_relaxation', 1.0)

        # 组装配置；线程数可由环境变量覆盖
        self.THREADS = int(os.environ.get('BULKFLOW_THREADS', self._getint('assembly', 'threads', 1)))
        self.CHUNK_SIZE = self._getint('assembly', 'chunk_size', 32)
        self.PENALTY_SCALE = self._getfloat('assembly', 'penalty_scale', 1e3)

        # 输出配置
        self.OUTPUT_DIR = self._get('output', 'output_dir', 'output')
        self.VTK_EVERY = self._getint('output', 'vtk_every', 10)
        self.WRITE_VTK = self._getboolean('output', 'write_vtk', True)
        self.WRITE_CSV = self._getboolean('output', 'write_csv', True)
        self.WRITE_REPORT = self._getboolean('output', 'write_report', True)

    def _get(self, section, option, default):
        if self.config.has_option(section, option):
            return self.config.get(section, option)
        return default

    def _getint(self, section, option, default):
        if self.config.has_option(section, option):
            return self.config.getint(section, option)
        return default

    def _getfloat(self, section, option, default):
        if self.config.has_option(section, option):
            return self.config.getfloat(section, option)
        return default

    def _getboolean(self, section, option, default):
        if self.config.has_option(section, option):
            return self.config.getboolean(section, option)
        return default


# 全局配置实例
config = Config()


CaseName = Literal['stokes_axisym', 'obstacle', 'cavity', 'torus', 'poiseuille', 'decay']

# 各算例的物性与时间默认值
CASE_DEFAULTS: Dict[str, Dict[str, object]] = {
    'stokes_axisym': {'mu': 0.1, 'rho': 1.0},
    'obstacle': {'mu': 0.01, 'rho': 1.0, 'dt': 0.01, 't_end': 3.0},
    'cavity': {'mu': 0.01, 'rho': 1.0},
    'torus': {'mu': 1.0, 'rho': 1.0, 'dt': 0.1, 't_end': 60.0},
    'poiseuille': {'mu': 1.0, 'rho': 0.0},
    'decay': {'mu': 1.0, 'rho': 1.0, 'dt': 0.05, 't_end': 0.5},
}
# 非定常绕流的粘度随映射而定
INSTATIONARY_OBSTACLE_MU = {'phi1': 0.0015, 'phi2': 0.0015, 'phi3': 0.002}


class RunConfig(BaseModel):
    """一次运行的完整参数，未给出的字段取算例默认值"""

    model_config = ConfigDict(extra='forbid')

    case: CaseName
    mapping: Literal['phi1', 'phi2', 'phi3'] = 'phi1'
    stationary: bool = True
    refine_level: int = Field(0, ge=0)
    refine_levels: List[int] = Field(default_factory=lambda: [0, 1, 2])

    q_geom: Optional[int] = Field(None, ge=1)
    q_u: int = Field(2, ge=1)
    q_p: Optional[int] = Field(None, ge=1)
    pressure_regime: Optional[Literal['taylor_hood', 'equal_order', 'anisotropic']] = None
    stabilization: Literal['none', 'pspg', 'brezzi_pitkaranta'] = 'none'
    allow_pspg_with_taylor_hood: bool = False

    penalty_alpha: Optional[float] = Field(None, ge=0.0)
    penalty_scale: float = Field(default_factory=lambda: config.PENALTY_SCALE, gt=0.0)
    mu: Optional[float] = None
    rho: Optional[float] = None

    picard_tol: float = Field(default_factory=lambda: config.PICARD_TOL, gt=0.0)
    picard_max_iter: int = Field(default_factory=lambda: config.PICARD_MAX_ITER, ge=0)
    picard_relaxation: float = Field(default_factory=lambda: config.PICARD_RELAXATION, gt=0.0, le=1.0)
    linear_solver: Literal['direct', 'iterative'] = Field(default_factory=lambda: config.LINEAR_SOLVER)

    t_start: float = 0.0
    t_end: Optional[float] = None
    dt: Optional[float] = None

    output_dir: str = Field(default_factory=lambda: config.OUTPUT_DIR)
    vtk_every: int = Field(default_factory=lambda: config.VTK_EVERY, ge=1)
    write_vtk: bool = Field(default_factory=lambda: config.WRITE_VTK)
    write_csv: bool = Field(default_factory=lambda: config.WRITE_CSV)
    write_report: bool = Field(default_factory=lambda: config.WRITE_REPORT)
    threads: int = Field(default_factory=lambda: config.THREADS, ge=1)
    chunk_size: int = Field(default_factory=lambda: config.CHUNK_SIZE, ge=1)

    @field_validator('refine_levels', mode='before')
    @classmethod
    def _split_levels(cls, value):
        if isinstance(value, str):
            items = [v for v in re.split(r'[,\s]+', value.strip().strip('[]')) if v]
            return [int(v) for v in items]
        return value

    @model_validator(mode='after')
    def _apply_defaults(self):
        defaults = CASE_DEFAULTS[self.case]
        if self.mu is None:
            if self.case == 'obstacle' and not self.stationary:
                self.mu = INSTATIONARY_OBSTACLE_MU[self.mapping]
            else:
                self.mu = float(defaults['mu'])
        if self.rho is None:
            self.rho = float(defaults['rho'])
        if self.dt is None and 'dt' in defaults:
            self.dt = float(defaults['dt'])
        if self.t_end is None and 't_end' in defaults:
            self.t_end = float(defaults['t_end'])
        if self.q_geom is None:
            self.q_geom = self.q_u + 1

        if self.mu <= 0:
            raise ValueError(f'viscosity mu={self.mu} must be positive')
        if self.rho < 0:
            raise ValueError(f'density rho={self.rho} must be nonnegative')
        if self.dt is not None and self.dt <= 0:
            raise ValueError(f'time step dt={self.dt} must be positive')
        if self.t_end is not None and self.t_end <= self.t_start:
            raise ValueError(f't_end={self.t_end} must exceed t_start={self.t_start}')
        if not self.refine_levels or min(self.refine_levels) < 0:
            raise ValueError('refine_levels must list nonnegative levels')
        if self.case == 'cavity' and self.q_u < 2:
            raise ValueError('cavity case needs q_u >= 2')

        regime = self.pressure_regime
        if regime is None:
            if self.q_p is None or self.q_p == self.q_u - 1:
                regime = 'taylor_hood'
            elif self.q_p == self.q_u:
                regime = 'equal_order'
            else:
                raise ValueError(f'orders q_u={self.q_u}, q_p={self.q_p} match no pressure regime')
        if regime in ('taylor_hood', 'anisotropic'):
            expected = self.q_u - 1
        else:
            expected = self.q_u
        if self.q_p is None:
            self.q_p = expected
        if self.q_p != expected or self.q_p < 1:
            raise ValueError(f'{regime} regime needs q_p={expected} for q_u={self.q_u}, got q_p={self.q_p}')
        if regime == 'equal_order' and self.stabilization == 'none':
            raise ValueError('equal-order pair requires stabilization (pspg or brezzi_pitkaranta)')
        if regime == 'taylor_hood' and self.stabilization == 'pspg' and not self.allow_pspg_with_taylor_hood:
            raise ValueError('PSPG on a Taylor-Hood pair needs allow_pspg_with_taylor_hood = true')
        self.pressure_regime = regime
        return self

    @property
    def pressure_orders(self) -> Tuple[int, int, int]:
        if self.pressure_regime == 'anisotropic':
            return (self.q_p, self.q_p, self.q_u)
        return (self.q_p,) * 3


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """把 INI 格式的运行文档解析为 RunConfig

    Args:
        text: 运行文档，缺少节头时视为 [run] 节
        overrides: 命令行 --set 覆盖项

    Raises:
        ParseError: 文档格式错误
        ValidationError: 参数违反约束
    """
    has_header = re.search(r'^\s*\[', text, re.MULTILINE) is not None
    body = text if has_header else '[run]\n' + text
    offset = 0 if has_header else 1

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    parser.optionxform = str
    try:
        parser.read_string(body)
    except configparser.DuplicateOptionError as e:
        raise ParseError('duplicate key', line=e.lineno - offset, key=e.option) from e
    except configparser.DuplicateSectionError as e:
        raise ParseError(f"duplicate section '{e.section}'", line=e.lineno - offset) from e
    except configparser.MissingSectionHeaderError as e:
        raise ParseError('missing section header', line=e.lineno - offset) from e
    except configparser.ParsingError as e:
        line = e.errors[0][0] - offset if e.errors else None
        raise ParseError('malformed line', line=line) from e

    unknown = [s for s in parser.sections() if s != 'run']
    if unknown:
        raise ParseError(f"unknown section '{unknown[0]}'")
    values = {k: v for k, v in parser['run'].items() if v.strip() != ''} if parser.has_section('run') else {}
    values.update(overrides or {})

    try:
        return RunConfig(**values)
    except PydanticValidationError as e:
        first = e.errors()[0]
        field = '.'.join(str(part) for part in first.get('loc', ())) or None
        message = first.get('msg', str(e))
        raise ValidationError(message.removeprefix('Value error, '), field=field) from e
