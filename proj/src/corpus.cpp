#include "drsync/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace drsync {

namespace fs = std::filesystem;

namespace corpus {

Bytes random_doc(std::mt19937_64& rng, size_t n) {
    Bytes x(n);
    for (auto& c : x) c = uint8_t(rng());
    return x;
}

Bytes text_doc(std::mt19937_64& rng, size_t n) {
    static const char* words[] = {"the",   "sync",  "block", "hash",  "table", "peel",   "edit", "level",
                                  "seed",  "round", "bob",   "alice", "file",  "prefix", "tree", "weight",
                                  "query", "delta", "merge", "cell",  "data",  "index",  "path", "sketch"};
    Bytes x;
    x.reserve(n + 16);
    while (x.size() < n) {
        const char* w = words[rng() % std::size(words)];
        x.insert(x.end(), w, w + std::char_traits<char>::length(w));
        x.push_back(rng() % 12 == 0 ? '\n' : ' ');
    }
    x.resize(n);
    return x;
}

Bytes mutate(std::mt19937_64& rng, Bytes doc, size_t edits, size_t moves, size_t max_move, EditLog* log) {
    auto note = [&](std::string s) {
        if (log) log->ops.push_back(std::move(s));
    };
    for (size_t m = 0; m < moves && doc.size() >= 2; ++m) {
        size_t cap = std::max<size_t>(1, std::min(max_move ? max_move : doc.size() / 8, doc.size() - 1));
        size_t len = 1 + rng() % cap;
        size_t from = rng() % (doc.size() - len + 1);
        Bytes seg(doc.begin() + long(from), doc.begin() + long(from + len));
        doc.erase(doc.begin() + long(from), doc.begin() + long(from + len));
        size_t to = rng() % (doc.size() + 1);
        doc.insert(doc.begin() + long(to), seg.begin(), seg.end());
        note("move " + std::to_string(from) + "+" + std::to_string(len) + " -> " + std::to_string(to));
    }
    for (size_t e = 0; e < edits; ++e) {
        int op = doc.empty() ? 1 : int(rng() % 3);
        size_t p = doc.empty() ? 0 : rng() % doc.size();
        if (op == 0) {
            doc[p] ^= uint8_t(1 + rng() % 255);
            note("sub " + std::to_string(p));
        } else if (op == 1) {
            doc.insert(doc.begin() + long(p), uint8_t(rng()));
            note("ins " + std::to_string(p));
        } else {
            doc.erase(doc.begin() + long(p));
            note("del " + std::to_string(p));
        }
    }
    return doc;
}

Bytes with_common_prefix(std::mt19937_64& rng, ByteView a, size_t prefix, size_t len) {
    prefix = std::min(prefix, a.size());
    Bytes b(a.begin(), a.begin() + long(prefix));
    while (b.size() < len) b.push_back(uint8_t(rng()));
    // Make the first byte after the prefix differ so the common prefix is exact.
    if (prefix < a.size() && prefix < b.size() && b[prefix] == a[prefix]) b[prefix] ^= 1;
    return b;
}

}  // namespace corpus

Bytes encode_document(const std::string& path, ByteView content) {
    Bytes d(path.begin(), path.end());
    d.push_back(0);
    d.insert(d.end(), content.begin(), content.end());
    return d;
}

bool decode_document(ByteView doc, std::string& path, Bytes& content) {
    auto z = std::find(doc.begin(), doc.end(), uint8_t(0));
    if (z == doc.end()) return false;
    path.assign(doc.begin(), z);
    content.assign(z + 1, doc.end());
    return true;
}

std::vector<Bytes> to_documents(const Directory& dir) {
    std::vector<Bytes> out;
    for (const auto& [p, c] : dir) out.push_back(encode_document(p, c));
    return out;
}

Directory from_documents(const std::vector<Bytes>& docs) {
    Directory d;
    for (const auto& doc : docs) {
        std::string p;
        Bytes c;
        if (!decode_document(doc, p, c)) throw std::runtime_error("document without a path separator");
        d[p] = std::move(c);
    }
    return d;
}

Directory read_directory(const fs::path& root) {
    Directory d;
    if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (it->is_symlink() || !it->is_regular_file()) continue;
        std::ifstream in(it->path(), std::ios::binary);
        if (!in) throw std::runtime_error("cannot read " + it->path().string());
        Bytes c((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        d[fs::relative(it->path(), root).generic_string()] = std::move(c);
    }
    return d;
}

void write_directory(const fs::path& root, const Directory& dir) {
    fs::create_directories(root);
    Directory have = read_directory(root);
    for (const auto& [p, c] : have)
        if (!dir.count(p)) fs::remove(root / p);
    for (const auto& [p, c] : dir) {
        auto it = have.find(p);
        if (it != have.end() && it->second == c) continue;
        fs::path f = root / p;
        fs::create_directories(f.parent_path());
        std::ofstream out(f, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(c.data()), std::streamsize(c.size()));
        if (!out) throw std::runtime_error("cannot write " + f.string());
    }
}

namespace corpus {

namespace {

std::string random_name(std::mt19937_64& rng) {
    static const char alnum[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string s;
    if (rng() % 3 == 0) s += "dir" + std::to_string(rng() % 5) + "/";
    for (int i = 0; i < 8; ++i) s += alnum[rng() % 36];
    return s + ".txt";
}

}  // namespace

Directory random_directory(std::mt19937_64& rng, size_t files, size_t min_size, size_t max_size) {
    Directory d;
    while (d.size() < files) {
        size_t n = min_size + (max_size > min_size ? rng() % (max_size - min_size + 1) : 0);
        d[random_name(rng)] = rng() % 2 ? text_doc(rng, n) : random_doc(rng, n);
    }
    return d;
}

Directory mutate_directory(std::mt19937_64& rng, const Directory& dir, size_t count, std::vector<DirChange>* log,
                           bool allow_renames, bool allow_adds) {
    Directory out = dir;
    std::set<std::string> touched;
    auto pick = [&]() -> std::string {
        std::vector<std::string> free;
        for (const auto& [p, c] : out)
            if (!touched.count(p)) free.push_back(p);
        if (free.empty()) return {};
        return free[rng() % free.size()];
    };
    auto note = [&](std::string k, std::string p, std::string d) {
        if (log) log->push_back({std::move(k), std::move(p), std::move(d)});
    };
    for (size_t c = 0; c < count; ++c) {
        unsigned kind = unsigned(rng() % 10);
        std::string p = pick();
        if (p.empty()) {
            if (!allow_adds) break;
            kind = 9;
        }
        if (kind == 9 && !allow_adds) kind = 0;
        if (kind < 6) {
            size_t edits = 1 + rng() % 3;
            out[p] = mutate(rng, out[p], edits);
            touched.insert(p);
            note("edit", p, std::to_string(edits) + " byte edits");
        } else if (kind < 8 && allow_renames) {
            // one-character change to the file name, content untouched
            std::string q = p;
            do {
                q = p;
                size_t i = q.rfind('/') == std::string::npos ? 0 : q.rfind('/') + 1;
                q[i] = char('a' + rng() % 26);
            } while (q == p || out.count(q));
            out[q] = std::move(out[p]);
            out.erase(p);
            touched.insert(q);
            note("rename", p, q);
        } else if (kind == 8) {
            out.erase(p);
            note("delete", p, "");
        } else {
            std::string q;
            do q = random_name(rng);
            while (out.count(q));
            size_t n = 64 + rng() % 256;
            out[q] = text_doc(rng, n);
            touched.insert(q);
            note("add", q, std::to_string(n) + " bytes");
        }
    }
    return out;
}

size_t document_difference(const Directory& a, const Directory& b) {
    size_t d = 0;
    for (const auto& [p, c] : a) {
        auto it = b.find(p);
        d += it == b.end() || it->second != c;
    }
    for (const auto& [p, c] : b) {
        auto it = a.find(p);
        d += it == a.end() || it->second != c;
    }
    return d;
}

}  // namespace corpus

}  // namespace drsync
