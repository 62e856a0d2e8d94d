import math
import os

from jinja2 import Environment, FileSystemLoader


template_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'templates')
env = Environment(loader=FileSystemLoader(template_path), trim_blocks=True, lstrip_blocks=True)
env.filters['num'] = lambda x, digits=4: 'n/a' if x is None or (isinstance(x, float) and math.isnan(x)) \
    else '{:.{}g}'.format(x, digits)


def load_template(tpl_name):
    return env.get_template(tpl_name)
