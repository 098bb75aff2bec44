"""Prompt templates for the enhancer and the builders that fill them.

Template bodies are plain-text renderings of the published prompts. The
``<image>`` marker marks where the image part goes in the chat message.
"""
from __future__ import annotations

from dataclasses import dataclass

IMAGE_MARKER = "<image>"
QUERY_SLOT = "{query_txt}"

CORPUS_CAPTION = """\
Task: Generate a precise, keyword-rich text entry based on the [Image].

Instructions:
1. Subject First: Identify the main object, entity, or scene layout immediately.
2. Distinctive Features: List specific details: colors, materials, text/logos (if visible), and unique shapes. If a detail doesn't exist, don't mention it (no stating 'no visible logos or text').
3. Entity Recognition: If the object is a named entity (e.g., 'Eiffel Tower', 'Toyota Camry', 'Nike'), state it.
4. Viewpoint: Mention the angle (e.g., 'close-up', 'aerial', 'profile') ONLY IF it distinguishes the image.
5. No Filler: Do not use aesthetic words (e.g., 'beautiful', 'cinematic'). Focus on factual visual content.
6. Length: Maximum 100 words.

Reference Image: <image>
Output:
"""

# same schema as the corpus caption, tighter length budget
QUERY_CAPTION = CORPUS_CAPTION.replace("Maximum 100 words", "Maximum 50 words")

QA_REWRITE = """\
Task: Rewrite the user's question by integrating the visual subject.
Goal: Create a search query that matches text documents. Keep it extremely concise.

Strict Constraint Rules:
1. Length Limit: The added visual description must be MAX 3–5 words. No long sentences.
2. The 'Specific vs. Generic' Split:
   - If Unique Entity (Landmark, Art, Car Model): Use the NAME only. Delete all visual adjectives.
     - BAD: 'Who built this tall iron tower?'
     - GOOD: 'Who built the Eiffel Tower?'
   - If Generic Object (Food, Plant, Animal): Use [Dominant Color/Material] + [Broad Category].
     - BAD: 'What is this delicious spicy red soup with shrimp?' (Too many distractors)
     - GOOD: 'What is this red noodle soup with shrimp?' (Anchors only)
3. No 'Filler' Adjectives: Banned words: 'beautiful', 'large', 'small', 'generic', 'distinct', 'looking', 'shaped'.
4. No Environment: Never mention background, weather, or lighting.
5. Zero-Leakage: NEVER answer the question yourself. YOU ARE ONLY REWRITING THE QUERY.

Examples:
Input: [Photo of Giant Panda] | Query: 'When was it discovered?'
Output: When was the Giant Panda discovered?
(Reason: Named entity. No adjectives needed.)

Input: [Photo of Yellowjacket Wasp] | Query: 'What species is this?'
Output: What species is this black and yellow wasp?
(Reason: 'Black and yellow' distinguishes it. 'Insect' is too broad, 'Wasp' is better.)

Input: [Photo of Red Laksa Soup] | Query: 'What dish is this?'
Output: What dish is this red noodle soup with shrimp?
(Reason: 'Red', 'Noodle', 'Shrimp' are the only keys needed to find the recipe.)

Input: [Photo of Blue Ford Focus] | Query: 'What car is this?'
Output: What car is this blue hatchback?
(Reason: 'Blue' and 'Hatchback' filter the candidates. 'Ford Focus' might be a hallucination, so we play it safe. We also don't want to leak the answer.)

Input: [Photo of Melting Clock Painting] | Query: 'Who painted this?'
Output: Who painted The Persistence of Memory?
(Reason: Unique Art → Specific Name.)

Current Task:
Query: {query_txt}
Input Image: <image>
Output:
"""

MODIFICATION = """\
Task: Extract the key semantic phrases describing the TARGET image. Remove conversational filler and grammar words.
Input: User Query (describing a change or a target attribute).

Strict Reduction Rules:
1. Delete Filler Verbs: Remove 'Is', 'Has', 'Make', 'Change', 'Show', 'Put', 'Be'.
2. Delete Pronouns/Articles: Remove 'it', 'the', 'a', 'an', 'my', 'me', 'them', 'this'.
3. Preserve Adjectives & Nouns: Keep ALL descriptors (colors, patterns, objects). If the user says 'Is white', output 'White'.
4. Preserve Prepositions: Keep 'with', 'on', 'in', 'without' to maintain spatial/compositional logic.

Note: There are cases where the original query is concise enough, and you might not have to change anything.

Examples:
Input: 'Is shiny and silver with shorter sleeves.'
Output: Shiny silver with shorter sleeves

Input: 'Is white in color with short sleeves and is more plain.'
Output: White, short sleeves, more plain

Input: 'Remove the lemon.'
Output: Remove lemon

Input: 'Make the needle upside down in the hand.'
Output: Needle upside down in hand

Input: 'Human and one animal from a different species.'
Output: Human and animal from different species

Input: 'Is a plain white feminine t shirt and is a tan shirt.'
Output: Plain white feminine t-shirt and tan shirt

Input: 'Remove all cheetahs.'
Output: Remove all cheetahs

Input: 'Remove one cheetah.'
Output: Remove one cheetah.

Input: 'Remove green from the background.'
Output: Remove green from background.

Current Input: {query_txt}
Output:
"""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    wants_image: bool
    word_budget: int | None = None


TEMPLATES = {
    t.template_id: t
    for t in (
        PromptTemplate("corpus_caption", CORPUS_CAPTION, True, 100),
        PromptTemplate("query_caption", QUERY_CAPTION, True, 50),
        PromptTemplate("qa_rewrite", QA_REWRITE, True),
        PromptTemplate("modification", MODIFICATION, False),
    )
}


@dataclass(frozen=True)
class PromptMessage:
    """A single user turn: prompt text (with image marker) plus attachments."""

    template_id: str
    text: str
    images: tuple[str, ...] = ()

    def content_parts(self, image_url=lambda ref: f"file://{ref}") -> list[dict]:
        """Chat-completions content list with images placed at their markers."""
        chunks = self.text.split(IMAGE_MARKER)
        if len(chunks) - 1 != len(self.images):
            raise ValueError("image marker count does not match attachments")
        parts: list[dict] = []
        for i, chunk in enumerate(chunks):
            if chunk:
                parts.append({"type": "text", "text": chunk})
            if i < len(self.images):
                parts.append({"type": "image_url", "image_url": {"url": image_url(self.images[i])}})
        return parts


def _fill(template_id: str, query_text: str | None = None, image_ref: str | None = None) -> PromptMessage:
    tpl = TEMPLATES[template_id]
    text = tpl.body
    if QUERY_SLOT in text:
        if not query_text or not query_text.strip():
            raise ValueError(f"{template_id}: empty query text")
        text = text.replace(QUERY_SLOT, query_text)
    images: tuple[str, ...] = ()
    if tpl.wants_image:
        if not image_ref:
            raise ValueError(f"{template_id}: missing image reference")
        images = (image_ref,)
    return PromptMessage(template_id, text, images)


def build_corpus_caption_prompt(image_ref: str) -> PromptMessage:
    return _fill("corpus_caption", image_ref=image_ref)


def build_query_caption_prompt(image_ref: str) -> PromptMessage:
    return _fill("query_caption", image_ref=image_ref)


def build_qa_rewrite_prompt(query_text: str, image_ref: str) -> PromptMessage:
    return _fill("qa_rewrite", query_text, image_ref)


def build_modification_prompt(query_text: str) -> PromptMessage:
    # the reference image is deliberately left out: it biases the rewrite
    # toward describing the reference instead of the target
    return _fill("modification", query_text)
