// Word lists for synthetic records. Invented and license-free.

pub(super) const FIRST_NAMES: &[&str] = &[
    "aaron", "abbas", "adele", "adrian", "afsaneh", "ahmad", "aida", "alan", "alberto", "alex", "ali", "alice",
    "amir", "ana", "andrea", "anna", "arash", "arman", "arya", "ava", "babak", "bahar", "ben", "bijan",
    "bruno", "camila", "carla", "carlos", "chen", "chloe", "clara", "daniel", "dara", "david", "diana",
    "dina", "elena", "eli", "elham", "emil", "emma", "erik", "ethan", "farah", "farid", "fatemeh", "felix",
    "fiona", "gabriel", "giulia", "goli", "hamed", "hana", "hassan", "helen", "hugo", "ian", "ida", "iman",
    "irene", "ivan", "jack", "jana", "javad", "jonas", "julia", "kamran", "kasra", "kate", "kian", "laila",
    "lara", "leo", "lina", "lucas", "luis", "maja", "maryam", "maresha", "marco", "maria", "mateo", "maya",
    "mehdi", "mina", "mohsen", "nadia", "nasim", "navid", "nika", "nina", "noah", "omid", "oscar", "parisa",
    "paul", "pedro", "peyman", "rana", "reza", "rosa", "sahar", "sam", "sara", "saeed", "sina", "sofia",
    "soheil", "tara", "theo", "tina", "victor", "yara", "yasmin", "yusuf", "zahra", "zoe",
];

pub(super) const LAST_NAMES: &[&str] = &[
    "abbasi", "adams", "ahmadi", "akbari", "alavi", "amini", "bakker", "bauer", "bianchi", "brown",
    "carter", "castro", "chen", "costa", "davis", "dehghan", "ebrahimi", "evans", "farahani", "fischer",
    "garcia", "ghorbani", "green", "hall", "hashemi", "hosseini", "hughes", "jafari", "jansen", "jones",
    "kamali", "karimi", "kaya", "khan", "kiani", "klein", "lange", "larsen", "lee", "lopez", "martin",
    "meyer", "mirzaei", "moradi", "moreno", "muller", "najafi", "nazari", "nielsen", "novak", "omidi",
    "owen", "parker", "perez", "petrov", "rahimi", "rashidi", "reyes", "rezaei", "rossi", "sadeghi",
    "salehi", "santos", "schmidt", "shahi", "sharifi", "silva", "smith", "soltani", "taheri", "tehrani",
    "torres", "vogel", "wagner", "walker", "weber", "white", "wilson", "wong", "yazdani", "young",
    "zamani", "zand", "zarei", "ziegler",
];

pub(super) const WORDS: &[&str] = &[
    "alpha", "amber", "apex", "arc", "atlas", "aurora", "azure", "beacon", "birch", "blue", "bolt",
    "bright", "cedar", "cloud", "coast", "coral", "crest", "crystal", "delta", "desert", "digital",
    "eagle", "echo", "ember", "falcon", "fern", "field", "flame", "forest", "frost", "garden", "giant",
    "glass", "gold", "granite", "green", "harbor", "hawk", "horizon", "iris", "iron", "ivory", "jade",
    "jet", "lake", "leaf", "light", "lotus", "lunar", "maple", "marble", "meadow", "metro", "mint",
    "moon", "nova", "oak", "ocean", "olive", "onyx", "orbit", "palm", "pearl", "pine", "pixel", "prime",
    "pulse", "quartz", "rain", "raven", "river", "rock", "rose", "ruby", "sage", "sand", "shadow",
    "silver", "sky", "snow", "solar", "spark", "spring", "star", "stone", "storm", "summit", "sun",
    "swift", "tide", "tiger", "trail", "valley", "vertex", "violet", "wave", "willow", "wind", "wolf",
    "zen",
];

pub(super) const TLDS: &[&str] = &["com", "net", "org", "ir", "io", "co", "info", "shop"];

pub(super) const MAIL_PROVIDERS: &[&str] = &[
    "gmail.com", "yahoo.com", "outlook.com", "hotmail.com", "proton.me", "mail.com", "icloud.com",
];

/// Status values with their relative frequency.
pub(super) const STATUSES: &[(&str, u32)] = &[
    ("Active", 70),
    ("Suspended", 12),
    ("Terminated", 8),
    ("Pending", 6),
    ("Cancelled", 4),
];

pub(super) const NOISE_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
