from .render import FigureSpec, RenderInfo, SliceFormatError, render_figure, render_run

__version__ = "0.1.0"
