import os
import re

from .conftest import root_dir


class TestWorkflow:

    def test_workflow(self):
        workflow_basename = 'splat_workflow'

        yaml = f'{workflow_basename}.yaml'
        is_yaml = yaml in os.listdir(root_dir)

        yml = f'{workflow_basename}.yml'
        is_yml = yml in os.listdir(root_dir)

        if not is_yaml and not is_yml:
            assert False, (
                f'В каталоге {root_dir} не найден файл с описанием workflow '
                f'{yaml} или {yml}.'
            )

        if is_yaml and is_yml:
            assert False, (
                f'В каталоге {root_dir} не должно быть двух файлов {workflow_basename} '
                'с расширениями .yaml и .yml\n'
                'Удалите один из них'
            )

        filename = yaml if is_yaml else yml

        with open(os.path.join(root_dir, filename), 'r') as f:
            workflow = f.read()

        assert (
                re.search(r'on:\s*push:\s*branches:\s*-\smaster', workflow) or
                'on: [push]' in workflow or
                'on: push' in workflow
        ), f'Проверьте, что добавили действие при пуше в файл {filename}'
        assert 'pytest' in workflow, f'Проверьте, что добавили pytest в файл {filename}'
        assert 'flake8' in workflow, f'Проверьте, что добавили flake8 в файл {filename}'
        assert 'requirements.txt' in workflow, (
            f'Проверьте, что {filename} ставит зависимости из requirements.txt'
        )
