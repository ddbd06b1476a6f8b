"""Reference dimension names and item texts for the bundled document-quality rubric."""

EXPECTED_DIMENSIONS = [
    ("Structural Completeness & Organization", [
        "Clear introduction/overview at document start explaining purpose and goals",
        "Installation/setup instructions with complete environment configuration",
        "Comprehensive usage section detailing all commands and functions",
        "Multiple concrete examples with at least 3 different real-world scenarios",
        "Configuration/parameters section listing all configurable options",
        "Troubleshooting/error handling with dedicated section for FAQs",
        "Logical progression from basic to advanced concepts",
    ]),
    ("Practical Usability & Learnability", [
        "Beginner step-by-step guide with clear guidance keywords (first, then, next)",
        "Copy-paste ready examples with actual commands ($, python, bash, etc.)",
        "Explicit prerequisites clearly listing dependencies and required knowledge",
        "Common pitfalls documentation with warning/note/important markers",
        "Progressive complexity from simple to advanced examples",
        "Quick start guide or minimal working example section",
    ]),
    ("Example Quality & Coverage", [
        "At least 3 different real examples with complete executable code blocks",
        "Diverse use cases covering different scenarios, not just task variations",
        "Expected output demonstration using output:/result:/=>/-> markers",
        "Boundary condition examples showing edge cases and extreme scenarios",
        "Error handling scenarios demonstrating exception and failure handling",
        "Complex multi-step workflow showing complete real-world application",
    ]),
    ("Technical Depth & Accuracy", [
        "All parameters/options documented with parameter/option/flag keywords",
        "Return values and output format specification (types, JSON structure)",
        "Performance characteristics mentioned when relevant",
        "Clear limitations and constraints explicitly listed",
        "Integration with other systems explained and demonstrated",
        "Correct use of 2+ professional technical terms (API, CLI, SDK, etc.)",
    ]),
    ("Clarity & Readability", [
        "Clear concise language with average sentence length < 30 words",
        "Consistent formatting and style with unified header levels",
        "Proper use of at least 3 headers, lists (- or *), and code blocks",
        "Unambiguous statements avoiding vague or misleading expressions",
        "Appropriate detail level (500-15000 characters, not too brief or verbose)",
        "Good visual hierarchy using secondary headers (##) or tertiary headers (###)",
    ]),
    ("Command Coverage Completeness", [
        "Every command in examples explained in documentation",
        "All flags/options for each command documented",
        "Command syntax clearly demonstrated with correct format",
        "Usage context explained for when to use each command",
        "Relationships between multiple commands clarified",
        "No undocumented or hidden functionality",
    ]),
    ("Error Handling & Troubleshooting", [
        "Common errors and solutions listed with fixes",
        "Error message explanations clarifying meaning and context",
        "Debugging tips provided with diagnostic methods and commands",
        "Known issues and workarounds documented",
        "Support and bug reporting instructions provided",
        "Verification steps to check configuration correctness",
    ]),
    ("Advanced Scenarios & Best Practices", [
        "Advanced use cases and patterns with advanced/complex/production examples",
        "Best practices and recommendations using best practice/recommended/tip keywords",
        "Performance optimization tips when applicable",
        "Security considerations mentioned and explained when relevant",
        "Integration patterns showing how to combine with other tools",
        "Real-world workflow examples demonstrating complete practical scenarios",
    ]),
]
