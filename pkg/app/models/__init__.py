# Data Models
