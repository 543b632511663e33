# Сервисы конвейера редактирования признаков
