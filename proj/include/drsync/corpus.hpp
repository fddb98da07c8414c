#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "drsync/bits.hpp"

namespace drsync {

// Test and benchmark inputs with known ground truth.
namespace corpus {

Bytes random_doc(std::mt19937_64& rng, size_t n);

// Text-like content: words from a small vocabulary separated by spaces and newlines.
Bytes text_doc(std::mt19937_64& rng, size_t n);

struct EditLog {
    std::vector<std::string> ops;
};

// `edits` single-byte insertions/deletions/substitutions and `moves` block
// moves (cut a segment of up to max_move bytes, paste it elsewhere).
// Block edit distance from the input is at most edits + 3 * moves.
Bytes mutate(std::mt19937_64& rng, Bytes doc, size_t edits, size_t moves = 0, size_t max_move = 0,
             EditLog* log = nullptr);

// a with a random prefix of length `prefix` kept and an unrelated tail.
Bytes with_common_prefix(std::mt19937_64& rng, ByteView a, size_t prefix, size_t len);

}  // namespace corpus

// A directory as relative path -> content.
using Directory = std::map<std::string, Bytes>;

// Documents are path, a 0 byte, then the content.
Bytes encode_document(const std::string& path, ByteView content);
bool decode_document(ByteView doc, std::string& path, Bytes& content);
std::vector<Bytes> to_documents(const Directory& dir);
Directory from_documents(const std::vector<Bytes>& docs);

// Regular files only; symlinks and other entries are skipped.
Directory read_directory(const std::filesystem::path& root);
// Makes root hold exactly `dir`, removing files not in it.
void write_directory(const std::filesystem::path& root, const Directory& dir);

namespace corpus {

Directory random_directory(std::mt19937_64& rng, size_t files, size_t min_size, size_t max_size);

struct DirChange {
    std::string kind;  // edit, add, delete, rename
    std::string path;
    std::string detail;
};

// Applies `count` mixed changes; each touches one distinct file.  Without
// adds, the add share goes to edits.
Directory mutate_directory(std::mt19937_64& rng, const Directory& dir, size_t count, std::vector<DirChange>* log = nullptr,
                           bool allow_renames = true, bool allow_adds = true);

// Documents present on exactly one side.
size_t document_difference(const Directory& a, const Directory& b);

}  // namespace corpus

}  // namespace drsync
