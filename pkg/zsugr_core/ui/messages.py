"""Текстовые шаблоны: промпт для семантики классов, реестр жестов CADDIAN и тексты CLI."""

# Шаблон промпта, через который имя класса превращается в текст для текстового энкодера
PROMPT_TEMPLATE = "A photo of a diver gesturing {name}"

# 16 жестов языка CADDIAN в порядке идентификаторов классов
CADDIAN_CLASSES = (
    "start_comm",
    "end_comm",
    "up",
    "down",
    "photo",
    "backwards",
    "carry",
    "boat",
    "here",
    "mosaic",
    "num_delimiter",
    "one",
    "two",
    "three",
    "four",
    "five",
)

# Описания команд для argparse (ключ - имя подкоманды)
COMMAND_HELP = {
    "split": "Сгенерировать случайные разбиения seen/unseen и сохранить их в JSON",
    "train-gcat": "Этап 1: обучить трансформер GCAT с классификатором, инициализированным семантикой",
    "extract": "Извлечь признаки жестов обученным GCAT для всех образцов разбиения",
    "train-gan": "Этап 2: обучить условный WGAN-GP на признаках видимых классов",
    "synthesize": "Синтезировать признаки невиданных классов обученным генератором",
    "train-classifier": "Обучить линейный softmax-классификатор на реальных и синтетических признаках",
    "eval": "Посчитать метрики CZSL/GZSL, матрицы ошибок и агрегировать по разбиениям",
    "visualize": "Выгрузить карты внимания декодера GCAT",
    "run-all": "Прогнать весь конвейер по всем разбиениям",
}

# Заголовки колонок итоговой таблицы
TABLE_COLUMNS = ("Method", "U_czsl", "S_gzsl", "U_gzsl", "H")
