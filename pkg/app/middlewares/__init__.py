# Обёртки вокруг обработчиков подкоманд
