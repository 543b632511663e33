# Обработчики подкоманд CLI: каждый модуль регистрирует свои подкоманды через register(subparsers)
